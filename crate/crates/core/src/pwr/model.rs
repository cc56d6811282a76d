use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CallCounter, ExchangeMatrix, ModelParams, SimState, Trajectory};
use crate::error::{Result, SdoError};

/// Operating point at which every nodal reactivity vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalPoint {
    pub power: Vec<f64>,
    pub xenon: Vec<f64>,
    pub boron: f64,
    pub t_in: f64,
    /// Rod coverage `s_j(h_ref)` of each node.
    pub rod_coverage: Vec<f64>,
}

/// Calibrated simulator. Cloning shares the call counter.
#[derive(Debug, Clone)]
pub struct PwrModel {
    params: ModelParams,
    exchange: ExchangeMatrix,
    nominal: NominalPoint,
    counter: CallCounter,
}

/// Tip of the rod sits this many smoothing widths above the core top when
/// fully withdrawn, so the residual coverage there is `~ w·e^-5`.
const TIP_OFFSET_WIDTHS: f64 = 5.0;
const MAX_DAMPING_HALVINGS: usize = 40;
const MAX_CONTINUATION_LEVEL: usize = 6;
const ACCEPT_RESIDUAL: f64 = 1e-10;
const STEADY_STATE_TOL: f64 = 1e-10;
const STEADY_STATE_MAX_ITER: usize = 200;

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

impl PwrModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        Self::with_counter(params, CallCounter::new())
    }

    pub fn with_counter(params: ModelParams, counter: CallCounter) -> Result<Self> {
        params.validate()?;
        let exchange = ExchangeMatrix::new(params.n_z)?;
        let placeholder = NominalPoint {
            power: vec![],
            xenon: vec![],
            boron: 0.0,
            t_in: 0.0,
            rod_coverage: vec![],
        };
        let mut model = Self {
            params,
            exchange,
            nominal: placeholder,
            counter,
        };
        model.nominal = model.calibrate()?;
        Ok(model)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn exchange(&self) -> &ExchangeMatrix {
        &self.exchange
    }

    pub fn nominal(&self) -> &NominalPoint {
        &self.nominal
    }

    pub fn counter(&self) -> &CallCounter {
        &self.counter
    }

    pub fn n_z(&self) -> usize {
        self.params.n_z
    }

    /// Same model with an independent call counter.
    pub fn detached(&self) -> Self {
        Self {
            counter: CallCounter::new(),
            ..self.clone()
        }
    }

    /// Nominal point: full power, equilibrium xenon, rods at `h_ref`,
    /// boron at `cb_ref`. With every reactivity term referenced to this
    /// point, `ρ = 0` forces `M·P = 0`, i.e. the flat profile.
    fn calibrate(&self) -> Result<NominalPoint> {
        let p = &self.params;
        let n = p.n_z;
        let p_node = p.p_nom / n as f64;
        let power = vec![p_node; n];
        let iodine: Vec<f64> = power.iter().map(|&pj| p.gamma_i * pj / p.lambda_i).collect();
        let xenon: Vec<f64> = power
            .iter()
            .zip(&iodine)
            .map(|(&pj, &ij)| (p.gamma_x * pj + p.lambda_i * ij) / (p.lambda_x + p.sigma_x * pj))
            .collect();
        let nominal = NominalPoint {
            power,
            xenon,
            boron: p.cb_ref,
            t_in: p.t_ref(p.p_nom),
            rod_coverage: self.rod_coverage(p.h_ref),
        };
        // Newton from a perturbed guess must land back on the nominal point.
        let probe = Self {
            nominal: nominal.clone(),
            ..self.clone()
        };
        let guess: Vec<f64> = (0..n)
            .map(|j| p_node * (1.0 + 0.05 * (j as f64 - 0.5 * n as f64) / n as f64))
            .collect();
        let (pw, cb, _) = probe.solve_algebraic(
            &nominal.xenon,
            p.h_ref,
            p.p_nom,
            &guess,
            p.cb_ref + 25.0,
        )?;
        let drift = pw
            .iter()
            .zip(&nominal.power)
            .map(|(a, b)| (a - b).abs())
            .fold((cb - p.cb_ref).abs() / p.cb_ref.abs().max(1.0), f64::max);
        if drift > 1e-8 {
            return Err(SdoError::Config(format!(
                "calibration failed: nominal point is not an algebraic fixed point (drift {drift:.3e})"
            )));
        }
        Ok(nominal)
    }

    /// Depth of the rod tip below the core top, in nodes.
    fn rod_tip(&self, h_cr: f64) -> f64 {
        let p = &self.params;
        p.n_z as f64 * (p.h_max - h_cr) / (p.h_max - p.h_min) - TIP_OFFSET_WIDTHS * p.rod_shape_width
    }

    /// Covered fraction `s_j(h_cr)` of every node (node 1 at the top). The
    /// derivative with respect to the tip depth is a difference of logistics.
    pub fn rod_coverage(&self, h_cr: f64) -> Vec<f64> {
        let w = self.params.rod_shape_width;
        let tip = self.rod_tip(h_cr);
        (0..self.params.n_z)
            .map(|j| {
                let a = (tip - j as f64) / w;
                w * (softplus(a) - softplus(a - 1.0 / w))
            })
            .collect()
    }

    /// `d s_j / d h_cr` for every node.
    pub fn rod_coverage_slope(&self, h_cr: f64) -> Vec<f64> {
        let p = &self.params;
        let w = p.rod_shape_width;
        let tip = self.rod_tip(h_cr);
        let dtip_dh = -(p.n_z as f64) / (p.h_max - p.h_min);
        (0..p.n_z)
            .map(|j| {
                let a = (tip - j as f64) / w;
                (logistic(a) - logistic(a - 1.0 / w)) * dtip_dh
            })
            .collect()
    }

    /// Rod contribution `-W_rod·(s_j(h_cr) - s_j(h_ref))` to node reactivity.
    pub fn rod_reactivity(&self, h_cr: f64) -> Vec<f64> {
        self.rod_coverage(h_cr)
            .iter()
            .zip(&self.nominal.rod_coverage)
            .map(|(s, s0)| -self.params.rod_worth * (s - s0))
            .collect()
    }

    /// Affine feedback reactivity of every node, referenced to the nominal point.
    pub fn reactivity(&self, power: &[f64], t_in: f64, xenon: &[f64], h_cr: f64, boron: f64) -> Vec<f64> {
        let mut out = self.rod_reactivity(h_cr);
        self.add_feedback(&mut out, power, t_in, xenon, boron);
        out
    }

    fn add_feedback(&self, rho: &mut [f64], power: &[f64], t_in: f64, xenon: &[f64], boron: f64) {
        let p = &self.params;
        let nom = &self.nominal;
        let uniform = p.alpha_t * (t_in - nom.t_in) + p.alpha_b * (boron - nom.boron);
        for j in 0..p.n_z {
            rho[j] += uniform
                + p.alpha_d * (power[j] - nom.power[j])
                + p.alpha_x * (xenon[j] - nom.xenon[j]);
        }
    }

    /// Power-balance residual `[ρ⊙P + D·M·P ; ΣP − w]` at a given `(P, C_b)`.
    pub fn algebraic_residual(
        &self,
        xenon: &[f64],
        h_cr: f64,
        w: f64,
        power: &[f64],
        boron: f64,
    ) -> Vec<f64> {
        let rod = self.rod_reactivity(h_cr);
        self.residual_with_rod(&rod, xenon, w, power, boron)
    }

    fn residual_with_rod(&self, rod: &[f64], xenon: &[f64], w: f64, power: &[f64], boron: f64) -> Vec<f64> {
        let n = self.params.n_z;
        let mut rho = rod.to_vec();
        self.add_feedback(&mut rho, power, self.params.t_ref(w), xenon, boron);
        let mut mp = vec![0.0; n];
        self.exchange.apply(power, &mut mp);
        let mut f = Vec::with_capacity(n + 1);
        for j in 0..n {
            f.push(rho[j] * power[j] + self.params.coupling * mp[j]);
        }
        f.push(power.iter().sum::<f64>() - w);
        f
    }

    /// Newton solve of the power balance for `(P, C_b)` given the
    /// differential part; `T_in` follows the temperature program in closed
    /// form. Iodine does not enter the algebraic rows.
    pub fn solve_algebraic(
        &self,
        xenon: &[f64],
        h_cr: f64,
        w: f64,
        guess_power: &[f64],
        guess_boron: f64,
    ) -> Result<(Vec<f64>, f64, f64)> {
        let p = &self.params;
        let n = p.n_z;
        if !(w > 0.0 && w.is_finite()) {
            return Err(SdoError::Domain(format!("load must be positive, got {w}")));
        }
        if guess_power.iter().any(|&v| !(v > 0.0)) {
            return Err(SdoError::Domain("initial power guess must be positive".into()));
        }
        let t_in = p.t_ref(w);
        let rod = self.rod_reactivity(h_cr);
        let mut power = guess_power.to_vec();
        let mut boron = guess_boron;
        let mut f = self.residual_with_rod(&rod, xenon, w, &power, boron);
        let mut norm = inf_norm(&f);
        let mut iter = 0;
        while norm > p.newton_tol && iter < p.newton_max_iter {
            iter += 1;
            let mut rho = rod.clone();
            self.add_feedback(&mut rho, &power, t_in, xenon, boron);
            let mut jac = DMatrix::<f64>::zeros(n + 1, n + 1);
            for j in 0..n {
                for (i, m) in self.exchange.rows().nth(j).unwrap().iter().enumerate() {
                    jac[(j, i)] = p.coupling * m;
                }
                jac[(j, j)] += rho[j] + p.alpha_d * power[j];
                jac[(j, n)] = p.alpha_b * power[j];
                jac[(n, j)] = 1.0;
            }
            let rhs = DVector::from_iterator(n + 1, f.iter().map(|v| -v));
            let delta = jac.lu().solve(&rhs).ok_or(SdoError::Newton {
                iterations: iter,
                residual: norm,
            })?;
            let mut alpha = 1.0;
            let mut halvings = 0;
            loop {
                if (0..n).all(|j| power[j] + alpha * delta[j] > 0.0) {
                    break;
                }
                alpha *= 0.5;
                halvings += 1;
                if halvings > MAX_DAMPING_HALVINGS {
                    return Err(SdoError::Newton {
                        iterations: iter,
                        residual: norm,
                    });
                }
            }
            for j in 0..n {
                power[j] += alpha * delta[j];
            }
            boron += alpha * delta[n];
            f = self.residual_with_rod(&rod, xenon, w, &power, boron);
            norm = inf_norm(&f);
            if !norm.is_finite() {
                return Err(SdoError::Newton {
                    iterations: iter,
                    residual: norm,
                });
            }
        }
        if norm > ACCEPT_RESIDUAL {
            return Err(SdoError::Newton {
                iterations: iter,
                residual: norm,
            });
        }
        Ok((power, boron, t_in))
    }

    /// Advances one control interval: RK4 sub-steps on iodine/xenon with
    /// the algebraic variables held at their interval-start values, exact
    /// integration of the rod position, then an algebraic re-solve.
    pub fn step(&self, state: &SimState, u: f64, w: f64, dt: f64) -> Result<SimState> {
        let p = &self.params;
        let n = p.n_z;
        if !(dt > 0.0) {
            return Err(SdoError::Domain(format!("dt must be positive, got {dt}")));
        }
        if !u.is_finite() {
            return Err(SdoError::NonFinite(format!("rod speed {u}")));
        }
        let h = dt / p.n_sub as f64;
        let pw = &state.power;
        let mut iodine = state.iodine.clone();
        let mut xenon = state.xenon.clone();
        for _ in 0..p.n_sub {
            for j in 0..n {
                let pj = pw[j];
                let di = |i: f64| p.gamma_i * pj - p.lambda_i * i;
                let dx = |i: f64, x: f64| {
                    p.gamma_x * pj + p.lambda_i * i - (p.lambda_x + p.sigma_x * pj) * x
                };
                let (i0, x0) = (iodine[j], xenon[j]);
                let (ki1, kx1) = (di(i0), dx(i0, x0));
                let (i1, x1) = (i0 + 0.5 * h * ki1, x0 + 0.5 * h * kx1);
                let (ki2, kx2) = (di(i1), dx(i1, x1));
                let (i2, x2) = (i0 + 0.5 * h * ki2, x0 + 0.5 * h * kx2);
                let (ki3, kx3) = (di(i2), dx(i2, x2));
                let (i3, x3) = (i0 + h * ki3, x0 + h * kx3);
                let (ki4, kx4) = (di(i3), dx(i3, x3));
                iodine[j] = i0 + h / 6.0 * (ki1 + 2.0 * ki2 + 2.0 * ki3 + ki4);
                xenon[j] = x0 + h / 6.0 * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4);
            }
        }
        let h_cr = (state.h_cr + u * dt).clamp(p.h_min, p.h_max);
        self.counter.add(p.n_sub as u64);
        let (power, boron, t_in) = self.solve_with_continuation(state, &xenon, h_cr, w)?;
        Ok(SimState {
            iodine,
            xenon,
            h_cr,
            power,
            boron,
            t_in,
        })
    }

    /// Direct Newton solve from the previous algebraic values; on failure,
    /// walks `(X, h_cr, w)` from the previous state to the target in
    /// progressively finer homotopy stages.
    fn solve_with_continuation(
        &self,
        prev: &SimState,
        xenon: &[f64],
        h_cr: f64,
        w: f64,
    ) -> Result<(Vec<f64>, f64, f64)> {
        let first = match self.solve_algebraic(xenon, h_cr, w, &prev.power, prev.boron) {
            Ok(sol) => return Ok(sol),
            Err(e) => e,
        };
        let w_prev = prev.total_power();
        for level in 1..=MAX_CONTINUATION_LEVEL {
            let stages = 1usize << level;
            let mut power = prev.power.clone();
            let mut boron = prev.boron;
            let mut t_in = prev.t_in;
            let mut ok = true;
            for s in 1..=stages {
                let a = s as f64 / stages as f64;
                let x_s: Vec<f64> = prev
                    .xenon
                    .iter()
                    .zip(xenon)
                    .map(|(x0, x1)| x0 + a * (x1 - x0))
                    .collect();
                let h_s = prev.h_cr + a * (h_cr - prev.h_cr);
                let w_s = w_prev + a * (w - w_prev);
                match self.solve_algebraic(&x_s, h_s, w_s, &power, boron) {
                    Ok((pw, cb, t)) => {
                        power = pw;
                        boron = cb;
                        t_in = t;
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                return Ok((power, boron, t_in));
            }
        }
        Err(first)
    }

    /// Consistent equilibrium at load `w0` with rods at `h_ref`.
    pub fn steady_state(&self, w0: f64) -> Result<SimState> {
        self.steady_state_at(w0, self.params.h_ref)
    }

    /// Consistent equilibrium at load `w0` with rods held at `h_cr`.
    pub fn steady_state_at(&self, w0: f64, h_cr: f64) -> Result<SimState> {
        let p = &self.params;
        if !(w0 > 0.0 && w0 <= p.p_nom * (1.0 + 1e-12)) {
            return Err(SdoError::Domain(format!(
                "steady-state load must lie in (0, {}], got {w0}",
                p.p_nom
            )));
        }
        let h_cr = h_cr.clamp(p.h_min, p.h_max);
        let n = p.n_z;
        let mut power = vec![w0 / n as f64; n];
        let mut boron = p.cb_ref;
        for _ in 0..STEADY_STATE_MAX_ITER {
            let (iodine, xenon) = self.equilibrium_poisons(&power);
            let (new_power, new_boron, t_in) = self.solve_algebraic(&xenon, h_cr, w0, &power, boron)?;
            let change = new_power
                .iter()
                .zip(&power)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1e-3))
                .fold((new_boron - boron).abs() / boron.abs().max(1.0), f64::max);
            power = new_power;
            boron = new_boron;
            if change <= STEADY_STATE_TOL {
                let (iodine_eq, xenon_eq) = self.equilibrium_poisons(&power);
                let _ = (iodine, xenon);
                return Ok(SimState {
                    iodine: iodine_eq,
                    xenon: xenon_eq,
                    h_cr,
                    power,
                    boron,
                    t_in,
                });
            }
        }
        Err(SdoError::SteadyState(STEADY_STATE_MAX_ITER))
    }

    /// Iodine and xenon concentrations in equilibrium with a power profile.
    pub fn equilibrium_poisons(&self, power: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let iodine: Vec<f64> = power.iter().map(|&pj| p.gamma_i * pj / p.lambda_i).collect();
        let xenon = power
            .iter()
            .zip(&iodine)
            .map(|(&pj, &ij)| (p.gamma_x * pj + p.lambda_i * ij) / (p.lambda_x + p.sigma_x * pj))
            .collect();
        (iodine, xenon)
    }

    /// Rolls [`PwrModel::step`] over the sequences; returns all `N+1` states.
    pub fn simulate(&self, x0: &SimState, u: &[f64], w: &[f64], dt: f64) -> Result<Trajectory> {
        if u.len() != w.len() {
            return Err(SdoError::Domain(format!(
                "control and load sequences differ in length ({} vs {})",
                u.len(),
                w.len()
            )));
        }
        let mut states = Vec::with_capacity(u.len() + 1);
        states.push(x0.clone());
        for (k, (&uk, &wk)) in u.iter().zip(w).enumerate() {
            let next = self
                .step(states.last().unwrap(), uk, wk, dt)
                .map_err(|e| e.at_step(k))?;
            states.push(next);
        }
        Ok(Trajectory {
            dt,
            states,
            u: u.to_vec(),
            w: w.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n_z: usize) -> PwrModel {
        PwrModel::new(ModelParams::for_nodes(n_z)).unwrap()
    }

    #[test]
    fn reactivity_vanishes_at_nominal() {
        let m = model(6);
        let nom = m.nominal().clone();
        let rho = m.reactivity(&nom.power, nom.t_in, &nom.xenon, m.params().h_ref, nom.boron);
        assert!(rho.iter().all(|r| r.abs() < 1e-15), "{rho:?}");
    }

    #[test]
    fn boron_term_is_affine() {
        let m = model(6);
        let nom = m.nominal().clone();
        let h = m.params().h_ref + 37.0;
        let base = m.reactivity(&nom.power, nom.t_in, &nom.xenon, h, nom.boron);
        let shifted = m.reactivity(&nom.power, nom.t_in, &nom.xenon, h, nom.boron + 12.5);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((b - a - m.params().alpha_b * 12.5).abs() < 1e-15);
        }
    }

    #[test]
    fn withdrawn_rods_leave_negligible_coverage() {
        for n in [2, 4, 6, 10] {
            let m = model(n);
            let h_max = m.params().h_max;
            let cov = m.rod_coverage(h_max);
            assert!(cov.iter().all(|&s| (0.0..1e-3).contains(&s)), "{cov:?}");
            let rod = m.rod_reactivity(h_max);
            assert!(rod.iter().all(|&r| r >= -1e-3 * m.params().rod_worth));
        }
    }

    #[test]
    fn rod_slope_matches_finite_difference() {
        let m = model(6);
        for h in [50.0, 333.0, 500.0, 731.0, 990.0] {
            let slope = m.rod_coverage_slope(h);
            let (a, b) = (m.rod_coverage(h + 1e-4), m.rod_coverage(h - 1e-4));
            for j in 0..6 {
                let fd = (a[j] - b[j]) / 2e-4;
                assert!((fd - slope[j]).abs() < 1e-8, "h={h} j={j} {fd} {}", slope[j]);
            }
        }
    }

    #[test]
    fn symmetric_two_node_split() {
        let m = model(2);
        let nom = m.nominal().clone();
        let (p, _, _) = m
            .solve_algebraic(&nom.xenon, m.params().h_ref, 0.8, &[0.3, 0.5], nom.boron)
            .unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.4).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn residual_postcondition_holds() {
        let m = model(6);
        let s = m.steady_state(0.8).unwrap();
        let xenon: Vec<f64> = s.xenon.iter().enumerate().map(|(j, x)| x * (1.0 + 0.03 * j as f64)).collect();
        let h = 420.0;
        let (p, cb, t_in) = m.solve_algebraic(&xenon, h, 0.75, &s.power, s.boron).unwrap();
        let r = m.algebraic_residual(&xenon, h, 0.75, &p, cb);
        assert!(inf_norm(&r) <= 1e-10);
        assert!(p.iter().all(|&v| v > 0.0));
        assert_eq!(t_in, m.params().t_ref(0.75));
    }

    /// Independent sign check: scan P_1 over (0, w) with C_b eliminated from
    /// the first row and look for the root of the second row.
    #[test]
    fn top_heavy_xenon_pushes_power_down() {
        let m = model(2);
        let nom = m.nominal().clone();
        let w = 0.9;
        let xenon = vec![nom.xenon[0] * 1.2, nom.xenon[1] * 0.9];
        let h = m.params().h_ref;
        let prm = m.params().clone();
        let t_in = prm.t_ref(w);
        // Given P_1, row 1 is affine in C_b; solve it and return row 2.
        let row2 = |p1: f64| {
            let p = [p1, w - p1];
            let rho0 = m.reactivity(&p, t_in, &xenon, h, nom.boron);
            let c = -(rho0[0] * p[0] + prm.coupling * (p[1] - p[0])) / (prm.alpha_b * p[0]);
            let rho = m.reactivity(&p, t_in, &xenon, h, nom.boron + c);
            rho[1] * p[1] + prm.coupling * (p[0] - p[1])
        };
        let grid: Vec<f64> = (1..2000).map(|i| w * i as f64 / 2000.0).collect();
        let root = grid
            .windows(2)
            .find(|g| row2(g[0]).signum() != row2(g[1]).signum())
            .map(|g| 0.5 * (g[0] + g[1]))
            .expect("sign change");
        assert!(root < 0.5 * w);
        let (p, _, _) = m.solve_algebraic(&xenon, h, w, &[w / 2.0, w / 2.0], nom.boron).unwrap();
        assert!(p[0] < p[1]);
        assert!((p[0] - root).abs() < w / 1000.0);
    }

    #[test]
    fn steady_state_is_stationary() {
        let m = model(6);
        for w0 in [0.3, 0.7, 1.0] {
            let s = m.steady_state(w0).unwrap();
            let prm = m.params();
            for j in 0..6 {
                let di = prm.gamma_i * s.power[j] - prm.lambda_i * s.iodine[j];
                let dx = prm.gamma_x * s.power[j] + prm.lambda_i * s.iodine[j]
                    - (prm.lambda_x + prm.sigma_x * s.power[j]) * s.xenon[j];
                assert!(di.abs() <= 1e-10 && dx.abs() <= 1e-10, "{di} {dx}");
            }
            assert!((s.total_power() - w0).abs() <= 1e-10);
        }
    }

    #[test]
    fn steady_state_rejects_bad_load() {
        let m = model(6);
        assert!(m.steady_state(0.0).is_err());
        assert!(m.steady_state(1.5).is_err());
    }

    #[test]
    fn rod_position_integrates_speed() {
        let m = model(6);
        let s = m.steady_state(1.0).unwrap();
        let next = m.step(&s, 0.03, 1.0, 600.0).unwrap();
        assert!((next.h_cr - (s.h_cr + 18.0)).abs() < 1e-12);
        let clamped = m.step(&SimState { h_cr: 995.0, ..s }, 0.05, 1.0, 600.0).unwrap();
        assert_eq!(clamped.h_cr, m.params().h_max);
    }

    #[test]
    fn step_counts_sub_steps() {
        let m = model(6);
        let s = m.steady_state(1.0).unwrap();
        let before = m.counter().get();
        m.simulate(&s, &[0.0; 7], &[1.0; 7], 600.0).unwrap();
        assert_eq!(m.counter().get() - before, 7 * m.params().n_sub as u64);
    }

    #[test]
    fn empty_simulation_returns_initial_state() {
        let m = model(6);
        let s = m.steady_state(1.0).unwrap();
        let traj = m.simulate(&s, &[], &[], 600.0).unwrap();
        assert_eq!(traj.states, vec![s]);
    }

    #[test]
    fn mismatched_sequences_are_rejected() {
        let m = model(6);
        let s = m.steady_state(1.0).unwrap();
        assert!(m.simulate(&s, &[0.0; 3], &[1.0; 2], 600.0).is_err());
    }

    #[test]
    fn symmetric_state_keeps_zero_axial_offset() {
        let m = model(6);
        let s = m.steady_state(0.9).unwrap();
        let w: Vec<f64> = (0..72).map(|k| if k < 20 { 0.9 } else { 0.6 }).collect();
        let traj = m.simulate(&s, &vec![0.0; 72], &w, 600.0).unwrap();
        for st in &traj.states {
            let top: f64 = st.power[..3].iter().sum();
            let bottom: f64 = st.power[3..].iter().sum();
            assert!(((top - bottom) / st.total_power()).abs() < 1e-9);
        }
    }
}
