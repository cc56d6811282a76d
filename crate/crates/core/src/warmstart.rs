//! Initial control sequences (cold, shifted, behaviour-cloned, surrogate
//! optimized) and their refinement on the full-scale objective.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};
use crate::nn::{Activation, Mlp, Tape};
use crate::ocp::{
    ao_violation, ao_violation_slope, axial_offset, axial_offset_gradient, evaluate_full, stage_cost_raw, ControlBox,
    ControlSequence, CostKind, OcpSpec,
};
use crate::optim::{fd_gradient, projected_descent, Adam, AdamConfig, Objective, ObjectiveValue, OptTrace, StepRule};
use crate::pwr::{PwrModel, SimState};
use crate::surrogate::SurrogateNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    LoadChange,
    CostChange,
}

/// One last-minute-change problem: at time `k` the controller must solve
/// `(w, spec)` from `x0`, having solved `(prev_w, prev_spec)` at `k - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: usize,
    /// Past states ending with the current state `x0` (oldest first).
    pub history: Vec<SimState>,
    pub w: Vec<f64>,
    pub spec: OcpSpec,
    pub perturbation: Perturbation,
    /// Load forecast used at `k - 1`, starting at `k - 1`.
    pub prev_w: Vec<f64>,
    pub prev_spec: OcpSpec,
    /// Solution of the pre-change problem at `k - 1`.
    pub prev_solution: Vec<f64>,
}

impl Scenario {
    pub fn x0(&self) -> &SimState {
        self.history.last().expect("history holds at least x0")
    }

    /// The last `h + 1` states as flat vectors.
    pub fn context(&self, h: usize) -> Result<Vec<Vec<f64>>> {
        if self.history.len() < h + 1 {
            return Err(SdoError::Domain(format!(
                "scenario {} stores {} states, context window needs {}",
                self.id,
                self.history.len(),
                h + 1
            )));
        }
        Ok(self.history[self.history.len() - h - 1..].iter().map(SimState::to_vec).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let n = self.spec.horizon;
        if self.history.is_empty() {
            return Err(SdoError::Domain(format!("scenario {} has no states", self.id)));
        }
        if self.w.len() != n || self.prev_w.len() != n || self.prev_solution.len() != n {
            return Err(SdoError::Domain(format!(
                "scenario {}: sequence lengths disagree with horizon {n}",
                self.id
            )));
        }
        Ok(())
    }
}

pub fn cold_start(horizon: usize) -> ControlSequence {
    ControlSequence::zeros(horizon)
}

/// Drops the first move, repeats nothing: the tail is padded with the
/// feasible value closest to zero.
pub fn shift_init(prev: &[f64], bx: &ControlBox) -> ControlSequence {
    let mut u: Vec<f64> = prev.iter().skip(1).copied().collect();
    u.push(bx.nearest(0.0));
    ControlSequence(u).clipped(bx)
}

/// Penalized full-scale objective on normalized controls.
pub struct FullObjective<'a> {
    pub model: &'a PwrModel,
    pub x0: &'a SimState,
    pub w: &'a [f64],
    pub spec: &'a OcpSpec,
    pub bx: ControlBox,
    pub rel_step: f64,
    pub threads: usize,
}

impl<'a> FullObjective<'a> {
    pub fn new(model: &'a PwrModel, x0: &'a SimState, w: &'a [f64], spec: &'a OcpSpec) -> Self {
        Self {
            model,
            x0,
            w,
            spec,
            bx: ControlBox::from_params(model.params()),
            rel_step: 1e-4,
            threads: 1,
        }
    }

    pub fn evaluate_u(&self, u: &[f64]) -> Result<ObjectiveValue> {
        let ev = evaluate_full(self.model, u, self.x0, self.w, self.spec)?;
        Ok(ObjectiveValue {
            penalized: ev.penalized,
            cost: ev.cost,
            violation: ev.total_violation(),
        })
    }
}

impl Objective for FullObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.horizon
    }

    fn value(&self, z: &[f64]) -> Result<ObjectiveValue> {
        self.evaluate_u(&self.bx.denormalize(z))
    }

    fn gradient(&self, z: &[f64], at: &ObjectiveValue) -> Result<Vec<f64>> {
        let f = |zz: &[f64]| self.value(zz).map(|v| v.penalized);
        fd_gradient(&f, z, at.penalized, self.rel_step, 1.0, self.threads)
    }

    fn calls(&self) -> u64 {
        self.model.counter().get()
    }
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub u: ControlSequence,
    pub trace: OptTrace,
}

/// Projected descent on the full-scale penalized objective from `u0`.
pub fn refine_full(
    model: &PwrModel,
    u0: &[f64],
    x0: &SimState,
    w: &[f64],
    spec: &OcpSpec,
    iterations: usize,
    rule: &StepRule,
    threads: usize,
) -> Result<Refined> {
    let mut obj = FullObjective::new(model, x0, w, spec);
    obj.threads = threads;
    if !ControlSequence(u0.to_vec()).within(&obj.bx) {
        return Err(SdoError::Domain("initial controls outside the box".into()));
    }
    let z0 = obj.bx.normalize(u0);
    let out = projected_descent(&obj, &z0, -1.0, 1.0, iterations, rule)?;
    Ok(Refined {
        u: ControlSequence(obj.bx.denormalize(&out.z_best)).clipped(&obj.bx),
        trace: out.trace,
    })
}

/// Differentiable multi-step predictor used by the surrogate NLP.
pub trait DifferentiableRollout {
    fn rollout(&self, context: &[Vec<f64>], u: &[f64], w: &[f64]) -> Result<Vec<Vec<f64>>>;

    fn input_gradient(
        &self,
        context: &[Vec<f64>],
        u: &[f64],
        w: &[f64],
        cost_grad: &mut dyn FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
    ) -> Result<Vec<f64>>;
}

impl DifferentiableRollout for SurrogateNet {
    fn rollout(&self, context: &[Vec<f64>], u: &[f64], w: &[f64]) -> Result<Vec<Vec<f64>>> {
        SurrogateNet::rollout(self, context, u, w)
    }

    fn input_gradient(
        &self,
        context: &[Vec<f64>],
        u: &[f64],
        w: &[f64],
        cost_grad: &mut dyn FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
    ) -> Result<Vec<f64>> {
        SurrogateNet::input_gradient(self, context, u, w, |p| cost_grad(p))
    }
}

/// Cost of a predicted state sequence given the current state.
pub trait SequenceCost {
    fn value(&self, current: &[f64], pred: &[Vec<f64>]) -> Result<ObjectiveValue>;

    /// Adjoint of the penalized value with respect to every prediction.
    fn gradient(&self, current: &[f64], pred: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// Stage costs and soft AO constraints on flattened PWR states.
#[derive(Debug, Clone)]
pub struct PwrSequenceCost {
    pub spec: OcpSpec,
    pub n_z: usize,
    /// Penalty weight on the predicted constraint violations.
    pub nu: f64,
}

impl PwrSequenceCost {
    fn power<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[2 * self.n_z + 1..3 * self.n_z + 1]
    }

    fn boron(&self, x: &[f64]) -> f64 {
        x[3 * self.n_z + 1]
    }
}

impl SequenceCost for PwrSequenceCost {
    fn value(&self, current: &[f64], pred: &[Vec<f64>]) -> Result<ObjectiveValue> {
        let mut cost = 0.0;
        let mut viol = 0.0;
        let mut prev = current;
        for x in pred {
            let ao = axial_offset(self.power(x))?;
            cost += stage_cost_raw(ao, self.boron(x), self.boron(prev), &self.spec);
            viol += ao_violation(ao, &self.spec);
            prev = x;
        }
        Ok(ObjectiveValue {
            penalized: cost + self.nu * viol,
            cost,
            violation: viol,
        })
    }

    fn gradient(&self, current: &[f64], pred: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.n_z;
        let dim = current.len();
        let mut grad = vec![vec![0.0; dim]; pred.len()];
        for l in 0..pred.len() {
            let x = &pred[l];
            let ao = axial_offset(self.power(x))?;
            let mut d_ao = self.nu * ao_violation_slope(ao, &self.spec);
            match self.spec.cost_kind {
                CostKind::AxialOffsetTarget => d_ao += 2.0 * (ao - self.spec.ao_ref),
                CostKind::BoronSmoothness => {
                    let prev = if l == 0 { current } else { &pred[l - 1] };
                    let s2 = self.spec.boron_scale * self.spec.boron_scale;
                    let d = 2.0 * (self.boron(x) - self.boron(prev)) / s2;
                    grad[l][3 * n + 1] += d;
                    if l > 0 {
                        grad[l - 1][3 * n + 1] -= d;
                    }
                }
            }
            if d_ao != 0.0 {
                for (j, g) in axial_offset_gradient(self.power(x)).into_iter().enumerate() {
                    grad[l][2 * n + 1 + j] += d_ao * g;
                }
            }
        }
        Ok(grad)
    }
}

/// Surrogate NLP on normalized controls.
pub struct SurrogateObjective<'a> {
    pub dynamics: &'a dyn DifferentiableRollout,
    pub cost: &'a dyn SequenceCost,
    pub context: &'a [Vec<f64>],
    pub w: &'a [f64],
    pub bx: ControlBox,
}

impl Objective for SurrogateObjective<'_> {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn value(&self, z: &[f64]) -> Result<ObjectiveValue> {
        let u = self.bx.denormalize(z);
        let pred = self.dynamics.rollout(self.context, &u, self.w)?;
        self.cost.value(self.context.last().expect("non-empty context"), &pred)
    }

    fn gradient(&self, z: &[f64], _at: &ObjectiveValue) -> Result<Vec<f64>> {
        let u = self.bx.denormalize(z);
        let current = self.context.last().expect("non-empty context");
        let du = self
            .dynamics
            .input_gradient(self.context, &u, self.w, &mut |p| self.cost.gradient(current, p))?;
        // chain rule through u = centre + half_width · z
        Ok(du.into_iter().map(|g| g * self.bx.half_width()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct SdoOutcome {
    pub u: ControlSequence,
    pub iterations: usize,
    /// Objective of the surrogate NLP at the returned controls.
    pub value: ObjectiveValue,
    /// Set when the surrogate failed and the cold start was returned instead.
    pub fell_back: bool,
    pub wall_time_s: f64,
}

/// Solves the surrogate NLP from the cold start for `iterations` projected
/// descent steps. Any surrogate failure yields the cold start.
pub fn sdo_warmstart(
    dynamics: &dyn DifferentiableRollout,
    cost: &dyn SequenceCost,
    context: &[Vec<f64>],
    w: &[f64],
    bx: ControlBox,
    iterations: usize,
    rule: &StepRule,
) -> SdoOutcome {
    let start = Instant::now();
    let n = w.len();
    let cold = ControlSequence(vec![bx.nearest(0.0); n]);
    let obj = SurrogateObjective {
        dynamics,
        cost,
        context,
        w,
        bx,
    };
    let z0 = bx.normalize(&cold);
    let fallback = |e: Option<SdoError>| {
        if let Some(e) = e {
            log::warn!("surrogate warm start failed ({e}); using the cold start");
        }
        SdoOutcome {
            u: cold.clone(),
            iterations: 0,
            value: ObjectiveValue::plain(f64::NAN),
            fell_back: true,
            wall_time_s: start.elapsed().as_secs_f64(),
        }
    };
    if iterations == 0 {
        let mut out = fallback(None);
        out.fell_back = false;
        out.value = obj.value(&z0).unwrap_or(ObjectiveValue::plain(f64::NAN));
        return out;
    }
    match projected_descent(&obj, &z0, -1.0, 1.0, iterations, rule) {
        Ok(res) => SdoOutcome {
            u: ControlSequence(bx.denormalize(&res.z_best)).clipped(&bx),
            iterations,
            value: res.best,
            fell_back: false,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        Err(e) => fallback(Some(e)),
    }
}

/// Number of surrogate iterations that fit in `fraction` of a full-scale
/// budget of `full_iterations`, from measured per-iteration wall times.
pub fn surrogate_iterations(fraction: f64, full_iterations: usize, full_iter_s: f64, surrogate_iter_s: f64) -> usize {
    if !(fraction > 0.0) || !(surrogate_iter_s > 0.0) || !(full_iter_s > 0.0) {
        return 0;
    }
    (fraction * full_iterations as f64 * full_iter_s / surrogate_iter_s).floor() as usize
}

/// Measured wall time of one gradient step on each problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetCalibration {
    pub full_iter_s: f64,
    pub surrogate_iter_s: f64,
}

impl BudgetCalibration {
    pub fn iterations(&self, fraction: f64, full_iterations: usize) -> usize {
        surrogate_iterations(fraction, full_iterations, self.full_iter_s, self.surrogate_iter_s)
    }

    pub fn ratio(&self) -> f64 {
        self.full_iter_s / self.surrogate_iter_s
    }

    /// Times `reps` full-scale and surrogate gradient steps at the cold
    /// start of `scenario` (each step: value, gradient, one trial point) and
    /// keeps the medians. Simulator calls made here go to `model`'s counter.
    pub fn measure(
        model: &PwrModel,
        net: &SurrogateNet,
        scenario: &Scenario,
        nu_surrogate: f64,
        reps: usize,
    ) -> Result<Self> {
        let spec = &scenario.spec;
        let full = FullObjective::new(model, scenario.x0(), &scenario.w, spec);
        let context = scenario.context(net.context())?;
        let cost = PwrSequenceCost {
            spec: spec.clone(),
            n_z: model.n_z(),
            nu: nu_surrogate,
        };
        let sur = SurrogateObjective {
            dynamics: net,
            cost: &cost,
            context: &context,
            w: &scenario.w,
            bx: full.bx,
        };
        let z = vec![0.0; spec.horizon];
        let time_step = |obj: &dyn Objective| -> Result<f64> {
            let t = Instant::now();
            let v = obj.value(&z)?;
            let g = obj.gradient(&z, &v)?;
            let trial: Vec<f64> = z.iter().zip(&g).map(|(a, b)| (a - 1e-3 * b.signum()).clamp(-1.0, 1.0)).collect();
            obj.value(&trial)?;
            Ok(t.elapsed().as_secs_f64())
        };
        let mut f = Vec::with_capacity(reps);
        let mut s = Vec::with_capacity(reps);
        for _ in 0..reps.max(1) {
            f.push(time_step(&full)?);
            s.push(time_step(&sur)?);
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        Ok(Self {
            full_iter_s: median(&mut f),
            surrogate_iter_s: median(&mut s),
        })
    }
}

/// Behaviour-cloning regressor from problem context to controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Load forecast subsampling stride.
    pub w_stride: usize,
    /// Past states fed to the network besides the current one.
    pub context: usize,
    pub train_fraction: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            epochs: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            w_stride: 6,
            context: 1,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcNet {
    pub config: BcConfig,
    pub horizon: usize,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub bx: ControlBox,
    pub mlp: Mlp,
    /// Simulator RK4 sub-steps spent building the training set.
    pub dataset_calls: u64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A solved problem instance used as a BC training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcExample {
    pub scenario: Scenario,
    pub u_star: Vec<f64>,
}

pub fn bc_features(scenario: &Scenario, context: usize, w_stride: usize) -> Result<Vec<f64>> {
    let mut f: Vec<f64> = scenario.context(context)?.into_iter().flatten().collect();
    let mut onehot = [0.0; 2];
    onehot[scenario.spec.cost_kind.index()] = 1.0;
    f.extend(onehot);
    f.extend(scenario.w.iter().step_by(w_stride.max(1)));
    Ok(f)
}

impl BcNet {
    pub fn predict(&self, scenario: &Scenario) -> Result<ControlSequence> {
        let f = bc_features(scenario, self.config.context, self.config.w_stride)?;
        if f.len() != self.mlp.input_dim() || scenario.spec.horizon != self.horizon {
            return Err(SdoError::Domain(format!(
                "scenario {} does not match the behaviour-cloning input layout",
                scenario.id
            )));
        }
        let x: Vec<f64> = f.iter().zip(self.in_mean.iter().zip(&self.in_std)).map(|(v, (m, s))| (v - m) / s).collect();
        let z = self.mlp.predict(&x);
        Ok(ControlSequence(self.bx.denormalize(&z)).clipped(&self.bx))
    }
}

fn bc_loss(mlp: &Mlp, xs: &[Vec<f64>], ys: &[Vec<f64>], idx: &[usize], grad: Option<&mut [f64]>) -> f64 {
    let mut tape = Tape::default();
    let n_out = mlp.output_dim() as f64;
    let scale = 1.0 / (idx.len().max(1) as f64 * n_out);
    let mut loss = 0.0;
    let mut d_in = vec![0.0; mlp.input_dim()];
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for &i in idx {
        mlp.forward(&xs[i], &mut tape);
        let err: Vec<f64> = tape.output().iter().zip(&ys[i]).map(|(a, b)| a - b).collect();
        loss += scale * err.iter().map(|e| e * e).sum::<f64>();
        if let Some(g) = grad.as_deref_mut() {
            let d: Vec<f64> = err.iter().map(|e| 2.0 * scale * e).collect();
            mlp.backward(&tape, &d, Some(g), &mut d_in);
        }
    }
    loss
}

/// MSE regression of normalized controls on scenario features.
pub fn bc_train(examples: &[BcExample], config: &BcConfig, bx: ControlBox, dataset_calls: u64) -> Result<BcNet> {
    if examples.len() < 2 {
        return Err(SdoError::Dataset(format!("behaviour cloning needs >= 2 examples, got {}", examples.len())));
    }
    let horizon = examples[0].scenario.spec.horizon;
    let xs_raw: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| bc_features(&e.scenario, config.context, config.w_stride))
        .collect::<Result<_>>()?;
    let dim = xs_raw[0].len();
    if xs_raw.iter().any(|x| x.len() != dim) || examples.iter().any(|e| e.u_star.len() != horizon) {
        return Err(SdoError::Dataset("behaviour-cloning examples have inconsistent shapes".into()));
    }
    let (train_idx, val_idx) = crate::surrogate::split_indices(examples.len(), config.train_fraction, config.seed);
    let mut in_mean = vec![0.0; dim];
    let mut in_std = vec![0.0; dim];
    for &i in &train_idx {
        for j in 0..dim {
            in_mean[j] += xs_raw[i][j] / train_idx.len() as f64;
        }
    }
    for &i in &train_idx {
        for j in 0..dim {
            in_std[j] += (xs_raw[i][j] - in_mean[j]).powi(2) / train_idx.len() as f64;
        }
    }
    for (s, m) in in_std.iter_mut().zip(&in_mean) {
        let v = s.sqrt();
        *s = if v > 1e-12 * (1.0 + m.abs()) { v } else { 1.0 };
    }
    let xs: Vec<Vec<f64>> = xs_raw
        .iter()
        .map(|x| x.iter().zip(in_mean.iter().zip(&in_std)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    let ys: Vec<Vec<f64>> = examples.iter().map(|e| bx.normalize(&e.u_star)).collect();

    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::new(&sizes, Activation::Tanh, &mut rng, 0.1)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        mlp.n_params(),
    );
    let mut grad = vec![0.0; mlp.n_params()];
    let mut order = train_idx.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let loss = bc_loss(&mlp, &xs, &ys, batch, Some(&mut grad));
            if !loss.is_finite() {
                return Err(SdoError::Divergence {
                    epoch,
                    reason: format!("behaviour-cloning loss {loss}"),
                });
            }
            adam.step(mlp.params_mut(), &grad)?;
        }
    }
    let train_loss = bc_loss(&mlp, &xs, &ys, &train_idx, None);
    let val_loss = bc_loss(&mlp, &xs, &ys, &val_idx, None);
    Ok(BcNet {
        config: config.clone(),
        horizon,
        in_mean,
        in_std,
        bx,
        mlp,
        dataset_calls,
        train_loss,
        val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwr::ModelParams;
    use nalgebra::{DMatrix, DVector};

    /// `x+ = A x + b u`, exact and differentiable.
    struct Linear {
        a: [[f64; 2]; 2],
        b: [f64; 2],
    }

    impl Linear {
        fn toy() -> Self {
            Self {
                a: [[0.5, 0.1], [0.0, 0.3]],
                b: [1.0, 0.5],
            }
        }

        fn step(&self, x: &[f64], u: f64) -> Vec<f64> {
            (0..2).map(|i| self.a[i][0] * x[0] + self.a[i][1] * x[1] + self.b[i] * u).collect()
        }
    }

    impl DifferentiableRollout for Linear {
        fn rollout(&self, context: &[Vec<f64>], u: &[f64], _w: &[f64]) -> Result<Vec<Vec<f64>>> {
            let mut x = context.last().unwrap().clone();
            Ok(u.iter()
                .map(|&uk| {
                    x = self.step(&x, uk);
                    x.clone()
                })
                .collect())
        }

        fn input_gradient(
            &self,
            context: &[Vec<f64>],
            u: &[f64],
            w: &[f64],
            cost_grad: &mut dyn FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
        ) -> Result<Vec<f64>> {
            let pred = self.rollout(context, u, w)?;
            let g = cost_grad(&pred)?;
            let mut lam = [0.0; 2];
            let mut du = vec![0.0; u.len()];
            for k in (0..u.len()).rev() {
                for i in 0..2 {
                    lam[i] += g[k][i];
                }
                du[k] = self.b[0] * lam[0] + self.b[1] * lam[1];
                lam = [
                    self.a[0][0] * lam[0] + self.a[1][0] * lam[1],
                    self.a[0][1] * lam[0] + self.a[1][1] * lam[1],
                ];
            }
            Ok(du)
        }
    }

    struct SumSquares;

    impl SequenceCost for SumSquares {
        fn value(&self, _current: &[f64], pred: &[Vec<f64>]) -> Result<ObjectiveValue> {
            Ok(ObjectiveValue::plain(pred.iter().flatten().map(|v| v * v).sum()))
        }

        fn gradient(&self, _current: &[f64], pred: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
            Ok(pred.iter().map(|x| x.iter().map(|v| 2.0 * v).collect()).collect())
        }
    }

    /// Unconstrained least-squares optimum of the toy, built from the
    /// explicit response matrix.
    fn toy_optimum(sys: &Linear, x0: &[f64], n: usize) -> Vec<f64> {
        let mut g = DMatrix::zeros(2 * n, n);
        let mut c = DVector::zeros(2 * n);
        let mut x = x0.to_vec();
        for k in 0..n {
            x = sys.step(&x, 0.0);
            c[2 * k] = x[0];
            c[2 * k + 1] = x[1];
        }
        for j in 0..n {
            let mut e = sys.step(&[0.0, 0.0], 1.0);
            for k in j..n {
                g[(2 * k, j)] = e[0];
                g[(2 * k + 1, j)] = e[1];
                e = sys.step(&e, 0.0);
            }
        }
        let sol = g.svd(true, true).solve(&(-c), 1e-14).unwrap();
        sol.iter().copied().collect()
    }

    #[test]
    fn shift_examples() {
        let bx = ControlBox::new(-1.0, 1.0).unwrap();
        assert_eq!(shift_init(&[0.1, 0.2, 0.3], &bx).into_inner(), vec![0.2, 0.3, 0.0]);
        assert_eq!(shift_init(&[0.5], &bx).into_inner(), vec![0.0]);
        let off = ControlBox::new(0.2, 1.0).unwrap();
        assert_eq!(shift_init(&[0.3, 0.4], &off).into_inner(), vec![0.4, 0.2]);
    }

    #[test]
    fn cold_is_zero() {
        assert_eq!(cold_start(4).into_inner(), vec![0.0; 4]);
    }

    #[test]
    fn sdo_recovers_linear_optimum() {
        let sys = Linear::toy();
        let n = 6;
        let x0 = vec![1.0, -1.0];
        let exact = toy_optimum(&sys, &x0, n);
        let bound = 2.0 * exact.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let bx = ControlBox::new(-bound, bound).unwrap();
        let w = vec![0.0; n];
        let ctx = vec![x0];
        let out = sdo_warmstart(&sys, &SumSquares, &ctx, &w, bx, 3000, &StepRule::default());
        assert!(!out.fell_back);
        for (a, b) in out.u.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
        let cold = SurrogateObjective {
            dynamics: &sys,
            cost: &SumSquares,
            context: &ctx,
            w: &w,
            bx,
        }
        .value(&bx.normalize(&cold_start(n)))
        .unwrap();
        assert!(out.value.penalized <= cold.penalized);
    }

    #[test]
    fn zero_budget_returns_cold() {
        let sys = Linear::toy();
        let bx = ControlBox::new(-1.0, 1.0).unwrap();
        let out = sdo_warmstart(&sys, &SumSquares, &[vec![1.0, 0.0]], &[0.0; 5], bx, 0, &StepRule::default());
        assert_eq!(out.u.into_inner(), vec![0.0; 5]);
        assert_eq!(surrogate_iterations(0.0, 20, 1.0, 1e-3), 0);
        assert_eq!(surrogate_iterations(0.05, 20, 4e-3, 5e-4), 8);
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let sys = Linear::toy();
        let x0 = vec![1.0, -1.0];
        let exact = toy_optimum(&sys, &x0, 4);
        let bx = ControlBox::new(-10.0, 10.0).unwrap();
        let w = vec![0.0; 4];
        let ctx = vec![x0];
        let obj = SurrogateObjective {
            dynamics: &sys,
            cost: &SumSquares,
            context: &ctx,
            w: &w,
            bx,
        };
        let out = projected_descent(&obj, &bx.normalize(&exact), -1.0, 1.0, 10, &StepRule::default()).unwrap();
        let j0 = out.trace.rows[0].penalized;
        for r in &out.trace.rows {
            assert!((r.penalized - j0).abs() <= 1e-12 * (1.0 + j0), "{} vs {j0}", r.penalized);
        }
    }

    #[test]
    fn refine_trace_starts_at_full_evaluation() {
        let model = PwrModel::new(ModelParams::default()).unwrap();
        let spec = OcpSpec {
            horizon: 4,
            ..OcpSpec::default()
        };
        let x0 = model.steady_state(0.8).unwrap();
        let w = vec![0.8; 4];
        let u0 = vec![0.01, -0.02, 0.0, 0.03];
        let r = refine_full(&model, &u0, &x0, &w, &spec, 2, &StepRule::default(), 1).unwrap();
        let direct = evaluate_full(&model, &u0, &x0, &w, &spec).unwrap();
        assert_eq!(r.trace.rows[0].penalized, direct.penalized);
        assert_eq!(r.trace.rows.len(), 3);
        assert!(r.trace.rows[2].penalized <= r.trace.rows[0].penalized);
    }

    fn toy_scenario(model: &PwrModel, id: usize, load: f64, kind: CostKind) -> Scenario {
        let spec = OcpSpec {
            horizon: 6,
            ..OcpSpec::default()
        }
        .with_cost(kind);
        let x = model.steady_state(load).unwrap();
        Scenario {
            id,
            history: vec![x.clone(), x],
            w: vec![load; 6],
            spec: spec.clone(),
            perturbation: Perturbation::CostChange,
            prev_w: vec![load; 6],
            prev_spec: spec,
            prev_solution: vec![0.0; 6],
        }
    }

    fn toy_examples() -> Vec<BcExample> {
        let model = PwrModel::new(ModelParams::default()).unwrap();
        let bx = ControlBox::from_params(model.params());
        (0..5)
            .map(|i| {
                let kind = if i % 2 == 0 { CostKind::AxialOffsetTarget } else { CostKind::BoronSmoothness };
                let scenario = toy_scenario(&model, i, 0.5 + 0.1 * i as f64, kind);
                let u_star = (0..6).map(|k| bx.hi * ((i + k) as f64 * 0.7).sin()).collect();
                BcExample { scenario, u_star }
            })
            .collect()
    }

    #[test]
    fn bc_memorizes_small_dataset() {
        let ex = toy_examples();
        let bx = ControlBox::from_params(&ModelParams::default());
        let cfg = BcConfig {
            epochs: 3000,
            batch_size: 4,
            learning_rate: 3e-3,
            ..BcConfig::default()
        };
        let net = bc_train(&ex, &cfg, bx, 0).unwrap();
        assert!(net.train_loss < 1e-4, "train loss {}", net.train_loss);
        let u = net.predict(&ex[0].scenario).unwrap();
        assert_eq!(u.len(), 6);
        assert!(u.within(&bx));
    }

    #[test]
    fn bc_seeds_change_weights_not_shapes() {
        let ex = toy_examples();
        let bx = ControlBox::from_params(&ModelParams::default());
        let a = bc_train(&ex, &BcConfig { epochs: 5, seed: 1, ..BcConfig::default() }, bx, 0).unwrap();
        let b = bc_train(&ex, &BcConfig { epochs: 5, seed: 2, ..BcConfig::default() }, bx, 0).unwrap();
        assert_eq!(a.mlp.sizes(), b.mlp.sizes());
        assert_ne!(a.mlp.params(), b.mlp.params());
        assert!(bc_train(&ex[..1], &BcConfig::default(), bx, 0).is_err());
    }
}
