//! Budgeted first-order optimization over box-constrained decision vectors.
//!
//! The descent loop runs in normalized coordinates (every control scaled to
//! `[-1, 1]`). Step lengths are measured in those units: the search
//! direction is the gradient divided by its ∞-norm, so `η` is the largest
//! per-coordinate move of a trial step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Objective actually minimized (cost plus constraint penalty).
    pub penalized: f64,
    pub cost: f64,
    pub violation: f64,
}

impl ObjectiveValue {
    pub fn plain(v: f64) -> Self {
        Self {
            penalized: v,
            cost: v,
            violation: 0.0,
        }
    }
}

/// Objective with a gradient oracle, defined on normalized coordinates.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, z: &[f64]) -> Result<ObjectiveValue>;

    /// Gradient of the penalized objective at `z`; `at` is `value(z)`.
    fn gradient(&self, z: &[f64], at: &ObjectiveValue) -> Result<Vec<f64>>;

    /// Cumulative simulator RK4 sub-steps spent so far (0 when not tracked).
    fn calls(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptBudget {
    pub max_iterations: usize,
    /// Fraction of the total budget given to the auxiliary surrogate problem.
    pub surrogate_fraction: f64,
    pub record_at: Vec<usize>,
}

impl Default for OptBudget {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            surrogate_fraction: 0.05,
            record_at: vec![0, 5, 10, 15, 20],
        }
    }
}

impl OptBudget {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.surrogate_fraction) {
            errs.push(format!(
                "surrogate_fraction must lie in [0, 1) (got {})",
                self.surrogate_fraction
            ));
        }
        if let Some(n) = self.record_at.iter().find(|&&n| n > self.max_iterations) {
            errs.push(format!("record_at index {n} exceeds max_iterations {}", self.max_iterations));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SdoError::Validation(errs))
        }
    }
}

/// Backtracking step rule: halve on failure, double after a first-trial
/// success, capped at `eta_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepRule {
    pub eta0: f64,
    pub eta_max: f64,
    pub max_trials: usize,
    pub armijo: f64,
    pub growth: f64,
    /// Keep the adapted step between iterations instead of restarting each
    /// line search from `eta0`.
    pub carry_over: bool,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            eta0: 1e-2,
            eta_max: 1.0,
            max_trials: 4,
            armijo: 1e-4,
            growth: 2.0,
            carry_over: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub penalized: f64,
    pub violation: f64,
    pub step: f64,
    pub grad_norm: f64,
    pub calls: u64,
    pub evaluations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub rows: Vec<TraceRow>,
    /// Objective evaluations spent in line searches (not gradients).
    pub line_search_evals: usize,
}

impl OptTrace {
    pub fn at(&self, iteration: usize) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.iteration == iteration)
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iteration)
    }
}

pub struct DescentOutcome {
    pub z_best: Vec<f64>,
    pub best: ObjectiveValue,
    pub trace: OptTrace,
}

/// Projected gradient descent on `[lo, hi]^n` for exactly `iterations`
/// gradient steps. Returns the best iterate seen, which with the Armijo
/// acceptance rule is also the last accepted one.
pub fn projected_descent(
    objective: &dyn Objective,
    z0: &[f64],
    lo: f64,
    hi: f64,
    iterations: usize,
    rule: &StepRule,
) -> Result<DescentOutcome> {
    if z0.len() != objective.dim() {
        return Err(SdoError::Domain(format!(
            "start point has {} entries, objective expects {}",
            z0.len(),
            objective.dim()
        )));
    }
    if z0.iter().any(|&v| v < lo || v > hi) {
        return Err(SdoError::Domain("start point outside the box".into()));
    }
    let start = Instant::now();
    let mut z = z0.to_vec();
    let mut val = objective.value(&z)?;
    if !val.penalized.is_finite() {
        return Err(SdoError::NonFinite(format!("objective at start point: {}", val.penalized)));
    }
    let mut evaluations = 1;
    let mut trace = OptTrace::default();
    let mut eta = rule.eta0;
    let row = |it: usize, v: &ObjectiveValue, step: f64, g: f64, evals: usize| TraceRow {
        iteration: it,
        cost: v.cost,
        penalized: v.penalized,
        violation: v.violation,
        step,
        grad_norm: g,
        calls: objective.calls(),
        evaluations: evals,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    trace.rows.push(row(0, &val, 0.0, f64::NAN, evaluations));

    for it in 1..=iterations {
        let g = objective.gradient(&z, &val)?;
        evaluations += objective.dim();
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(SdoError::NonFinite(format!("gradient entry {k} at iteration {it}")));
        }
        let gnorm = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut step_taken = 0.0;
        if !rule.carry_over {
            eta = rule.eta0;
        }
        if gnorm > 0.0 {
            for trial in 0..rule.max_trials {
                let z_try: Vec<f64> = z
                    .iter()
                    .zip(&g)
                    .map(|(zi, gi)| (zi - eta * gi / gnorm).clamp(lo, hi))
                    .collect();
                let decrease: f64 = g.iter().zip(z.iter().zip(&z_try)).map(|(gi, (a, b))| gi * (a - b)).sum();
                if decrease <= 0.0 {
                    // projection killed the step: nothing left to gain along -g
                    break;
                }
                let v_try = objective.value(&z_try)?;
                evaluations += 1;
                trace.line_search_evals += 1;
                if v_try.penalized.is_finite() && v_try.penalized <= val.penalized - rule.armijo * decrease {
                    step_taken = z.iter().zip(&z_try).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                    z = z_try;
                    val = v_try;
                    if trial == 0 {
                        eta = (eta * rule.growth).min(rule.eta_max);
                    }
                    break;
                }
                eta *= 0.5;
            }
        }
        trace.rows.push(row(it, &val, step_taken, gnorm, evaluations));
    }
    Ok(DescentOutcome {
        z_best: z,
        best: val,
        trace,
    })
}

/// Forward-difference gradient; coordinate `k` uses the step
/// `rel_step · max(|z_k|, scale)`. A failed forward evaluation falls back to
/// a backward difference for that coordinate. `threads > 1` splits the
/// coordinates over scoped worker threads; the result does not depend on it.
pub fn fd_gradient<F>(f: &F, z: &[f64], f0: f64, rel_step: f64, scale: f64, threads: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let coord = |k: usize| -> Result<f64> {
        let h = rel_step * z[k].abs().max(scale);
        let mut zp = z.to_vec();
        zp[k] = z[k] + h;
        match f(&zp) {
            Ok(v) if v.is_finite() => Ok((v - f0) / h),
            first => {
                zp[k] = z[k] - h;
                match f(&zp) {
                    Ok(v) if v.is_finite() => Ok((f0 - v) / h),
                    second => Err(SdoError::NonFinite(format!(
                        "finite difference failed on coordinate {k}: forward {:?}, backward {:?}",
                        first.map_err(|e| e.to_string()),
                        second.map_err(|e| e.to_string())
                    ))),
                }
            }
        }
    };
    let n = z.len();
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(coord).collect();
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|begin| {
                let coord = &coord;
                s.spawn(move || (begin..(begin + chunk).min(n)).map(coord).collect::<Result<Vec<f64>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fd worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Central-difference gradient, used as an oracle in tests and diagnostics.
pub fn central_gradient<F>(f: &F, z: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    (0..z.len())
        .map(|k| {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[k] += step;
            zm[k] -= step;
            Ok((f(&zp)? - f(&zm)?) / (2.0 * step))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, dim: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(SdoError::NonFinite(format!(
                "gradient entry {k} = {} at Adam step {}",
                grad[k],
                self.t + 1
            )));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Runs `steps` Adam updates from `theta0` using the gradient oracle.
pub fn adam<G>(mut grad: G, theta0: &[f64], cfg: AdamConfig, steps: usize) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(SdoError::NonFinite("Adam start point".into()));
    }
    let mut theta = theta0.to_vec();
    let mut opt = Adam::new(cfg, theta.len());
    for _ in 0..steps {
        let g = grad(&theta)?;
        opt.step(&mut theta, &g)?;
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `½ (z - c)ᵀ diag(d) (z - c)`
    struct Quadratic {
        c: Vec<f64>,
        d: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn value(&self, z: &[f64]) -> Result<ObjectiveValue> {
            let v = z
                .iter()
                .zip(&self.c)
                .zip(&self.d)
                .map(|((zi, ci), di)| 0.5 * di * (zi - ci).powi(2))
                .sum();
            Ok(ObjectiveValue::plain(v))
        }
        fn gradient(&self, z: &[f64], _: &ObjectiveValue) -> Result<Vec<f64>> {
            Ok(z.iter().zip(&self.c).zip(&self.d).map(|((zi, ci), di)| di * (zi - ci)).collect())
        }
    }

    #[test]
    fn interior_minimizer_converges() {
        let q = Quadratic {
            c: vec![0.3, -0.2, 0.5, 0.0],
            d: vec![1.0, 2.0, 0.5, 3.0],
        };
        let out = projected_descent(&q, &[0.0; 4], -1.0, 1.0, 200, &StepRule::default()).unwrap();
        let g = q.gradient(&out.z_best, &out.best).unwrap();
        let gnorm = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(gnorm < 1e-6, "gradient norm {gnorm}");
        assert_eq!(out.trace.iterations(), 200);
    }

    #[test]
    fn exterior_minimizer_lands_on_clip() {
        let q = Quadratic {
            c: vec![1.7, -0.4, -3.0],
            d: vec![1.0, 1.0, 2.0],
        };
        let out = projected_descent(&q, &[0.0; 3], -1.0, 1.0, 200, &StepRule::default()).unwrap();
        let expected = [1.0, -0.4, -1.0];
        for (a, b) in out.z_best.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{:?}", out.z_best);
        }
    }

    #[test]
    fn zero_iterations_returns_start() {
        let q = Quadratic {
            c: vec![0.5],
            d: vec![1.0],
        };
        let out = projected_descent(&q, &[0.1], -1.0, 1.0, 0, &StepRule::default()).unwrap();
        assert_eq!(out.z_best, vec![0.1]);
        assert_eq!(out.trace.rows.len(), 1);
        assert!((out.trace.rows[0].penalized - 0.5 * 0.16).abs() < 1e-15);
    }

    #[test]
    fn recorded_objective_never_increases() {
        let q = Quadratic {
            c: vec![0.9, -0.9, 0.2, 0.4, -0.1],
            d: vec![10.0, 0.1, 1.0, 5.0, 0.3],
        };
        let out = projected_descent(&q, &[0.0; 5], -1.0, 1.0, 30, &StepRule::default()).unwrap();
        for pair in out.trace.rows.windows(2) {
            assert!(pair[1].penalized <= pair[0].penalized);
        }
    }

    #[test]
    fn start_outside_box_is_rejected() {
        let q = Quadratic {
            c: vec![0.0],
            d: vec![1.0],
        };
        assert!(projected_descent(&q, &[2.0], -1.0, 1.0, 1, &StepRule::default()).is_err());
    }

    #[test]
    fn fd_linear_is_exact_and_thread_independent() {
        let c = [1.5, -2.0, 0.25, 3.0, -0.5];
        let f = |z: &[f64]| -> Result<f64> { Ok(z.iter().zip(&c).map(|(a, b)| a * b).sum()) };
        let z = [0.1, 0.2, -0.3, 0.0, 0.7];
        let f0 = f(&z).unwrap();
        let g1 = fd_gradient(&f, &z, f0, 1e-4, 1.0, 1).unwrap();
        let g3 = fd_gradient(&f, &z, f0, 1e-4, 1.0, 3).unwrap();
        assert_eq!(g1, g3);
        for (a, b) in g1.iter().zip(&c) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fd_at_stationary_point_is_small() {
        let f = |z: &[f64]| -> Result<f64> { Ok(z.iter().map(|v| v * v).sum()) };
        let z = [0.0; 4];
        let g = fd_gradient(&f, &z, 0.0, 1e-4, 1.0, 1).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-4 + 1e-15));
    }

    #[test]
    fn fd_falls_back_to_backward_difference() {
        // undefined for z_0 > 0.5
        let f = |z: &[f64]| -> Result<f64> {
            if z[0] > 0.5 {
                Err(SdoError::Domain("outside".into()))
            } else {
                Ok(3.0 * z[0])
            }
        };
        let g = fd_gradient(&f, &[0.5], 1.5, 1e-4, 1.0, 1).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9);
        let dead = |_: &[f64]| -> Result<f64> { Err(SdoError::Domain("never".into())) };
        assert!(fd_gradient(&dead, &[0.0], 0.0, 1e-4, 1.0, 1).is_err());
    }

    #[test]
    fn adam_solves_one_dimensional_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let theta = adam(|t| Ok(vec![2.0 * t[0]]), &[3.0], cfg, 500).unwrap();
        assert!(theta[0].abs() < 1e-3, "{theta:?}");
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let theta = adam(|t| Ok(vec![0.0; t.len()]), &[1.0, -2.0], AdamConfig::default(), 50).unwrap();
        assert_eq!(theta, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let err = adam(|_| Ok(vec![f64::NAN]), &[1.0], AdamConfig::default(), 3).unwrap_err();
        assert!(matches!(err, SdoError::NonFinite(_)));
    }

    #[test]
    fn adam_is_deterministic() {
        let g = |t: &[f64]| Ok(t.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v.sin()).collect());
        let a = adam(g, &[0.3, 1.2, -0.7], AdamConfig::default(), 100).unwrap();
        let b = adam(g, &[0.3, 1.2, -0.7], AdamConfig::default(), 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_validation() {
        OptBudget::default().validate().unwrap();
        let bad = OptBudget {
            max_iterations: 5,
            surrogate_fraction: 1.0,
            record_at: vec![0, 10],
        };
        assert!(bad.validate().is_err());
    }
}
