//! Single-shooting optimal control problem on the PWR model: stage costs,
//! axial-offset path constraints and the penalized full-scale objective.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};
use crate::pwr::{ModelParams, PwrModel, SimState, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `(AO(P_{k+1}) - AO_ref)²`
    AxialOffsetTarget,
    /// `((C_b,k+1 - C_b,k) / boron_scale)²`
    BoronSmoothness,
}

impl CostKind {
    pub fn swapped(self) -> Self {
        match self {
            CostKind::AxialOffsetTarget => CostKind::BoronSmoothness,
            CostKind::BoronSmoothness => CostKind::AxialOffsetTarget,
        }
    }

    pub fn index(self) -> usize {
        match self {
            CostKind::AxialOffsetTarget => 0,
            CostKind::BoronSmoothness => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpSpec {
    /// Number of control intervals `N`.
    pub horizon: usize,
    /// Control interval length in seconds.
    pub dt: f64,
    pub cost_kind: CostKind,
    pub ao_ref: f64,
    pub ao_min: f64,
    pub ao_max: f64,
    /// Penalty weight `ν` on the summed positive part of the AO constraints.
    pub nu: f64,
    /// Boron difference (ppm) that costs one unit in the smoothness term.
    pub boron_scale: f64,
}

impl Default for OcpSpec {
    fn default() -> Self {
        Self {
            horizon: 48,
            dt: 600.0,
            cost_kind: CostKind::AxialOffsetTarget,
            ao_ref: 0.0,
            ao_min: -0.05,
            ao_max: 0.05,
            nu: 100.0,
            boron_scale: 1.0,
        }
    }
}

impl OcpSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.horizon == 0 {
            errs.push("horizon must be >= 1".to_string());
        }
        if !(self.dt > 0.0) {
            errs.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.ao_min < self.ao_max) {
            errs.push(format!("ao_min < ao_max required ({} >= {})", self.ao_min, self.ao_max));
        }
        if !(self.nu >= 0.0) {
            errs.push(format!("nu must be non-negative (got {})", self.nu));
        }
        if !(self.boron_scale > 0.0) {
            errs.push(format!("boron_scale must be positive (got {})", self.boron_scale));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SdoError::Validation(errs))
        }
    }

    /// AO target and band centred on the axial offset of `state`.
    pub fn centred_on(mut self, state: &SimState, half_width: f64) -> Result<Self> {
        let ao = axial_offset(&state.power)?;
        self.ao_ref = ao;
        self.ao_min = ao - half_width;
        self.ao_max = ao + half_width;
        Ok(self)
    }

    pub fn with_cost(mut self, kind: CostKind) -> Self {
        self.cost_kind = kind;
        self
    }
}

/// Box `[lo, hi]` on every rod-speed entry, with the affine map to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub lo: f64,
    pub hi: f64,
}

impl ControlBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(SdoError::Config(format!("empty control box [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_params(p: &ModelParams) -> Self {
        Self {
            lo: p.u_min,
            hi: p.u_max,
        }
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn clip(&self, u: f64) -> f64 {
        u.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, u: f64) -> bool {
        self.lo <= u && u <= self.hi
    }

    pub fn normalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| (v - self.centre()) / self.half_width()).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| self.centre() + self.half_width() * v).collect()
    }

    /// Feasible value closest to `target`.
    pub fn nearest(&self, target: f64) -> f64 {
        self.clip(target)
    }
}

/// Piecewise-constant rod speeds, one per control interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlSequence(pub Vec<f64>);

impl ControlSequence {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn clipped(mut self, bx: &ControlBox) -> Self {
        for v in &mut self.0 {
            *v = bx.clip(*v);
        }
        self
    }

    pub fn within(&self, bx: &ControlBox) -> bool {
        self.0.iter().all(|&v| bx.contains(v))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ControlSequence {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Turbine load `w_k` per control interval, in units of nominal power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoadProfile(pub Vec<f64>);

impl LoadProfile {
    pub fn constant(level: f64, n: usize) -> Self {
        Self(vec![level; n])
    }

    pub fn validate(&self, p_nom: f64) -> Result<()> {
        match self.0.iter().position(|&w| !(w > 0.0 && w <= p_nom * (1.0 + 1e-12))) {
            Some(k) => Err(SdoError::Domain(format!(
                "load {} at step {k} outside (0, {p_nom}]",
                self.0[k]
            ))),
            None => Ok(()),
        }
    }
}

impl Deref for LoadProfile {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `(Σ top half − Σ bottom half) / Σ all`, node 1 at the top.
pub fn axial_offset(power: &[f64]) -> Result<f64> {
    let total: f64 = power.iter().sum();
    if !(total > 0.0) {
        return Err(SdoError::Domain(format!("axial offset undefined for total power {total}")));
    }
    let half = power.len() / 2;
    let top: f64 = power[..half].iter().sum();
    Ok((2.0 * top - total) / total)
}

/// `∂AO/∂P_j`.
pub fn axial_offset_gradient(power: &[f64]) -> Vec<f64> {
    let total: f64 = power.iter().sum();
    let half = power.len() / 2;
    let top: f64 = power[..half].iter().sum();
    let diff = 2.0 * top - total;
    (0..power.len())
        .map(|j| {
            let sign = if j < half { 1.0 } else { -1.0 };
            (sign * total - diff) / (total * total)
        })
        .collect()
}

/// Positive part of the two-sided AO band constraint.
pub fn ao_violation(ao: f64, spec: &OcpSpec) -> f64 {
    (ao - spec.ao_max).max(0.0) + (spec.ao_min - ao).max(0.0)
}

/// `∂ violation / ∂AO` (zero inside the band).
pub fn ao_violation_slope(ao: f64, spec: &OcpSpec) -> f64 {
    if ao > spec.ao_max {
        1.0
    } else if ao < spec.ao_min {
        -1.0
    } else {
        0.0
    }
}

/// Stage cost from the raw ingredients, shared by the full-scale and the
/// surrogate objectives.
pub fn stage_cost_raw(ao_next: f64, boron_next: f64, boron_prev: f64, spec: &OcpSpec) -> f64 {
    match spec.cost_kind {
        CostKind::AxialOffsetTarget => (ao_next - spec.ao_ref).powi(2),
        CostKind::BoronSmoothness => ((boron_next - boron_prev) / spec.boron_scale).powi(2),
    }
}

/// `ℓ(x_{k+1}, u_k)`; the boron term differences consecutive states.
pub fn stage_cost(next: &SimState, prev: &SimState, _u: f64, spec: &OcpSpec) -> Result<f64> {
    let ao = axial_offset(&next.power)?;
    Ok(stage_cost_raw(ao, next.boron, prev.boron, spec))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Sum of stage costs.
    pub cost: f64,
    /// `cost + ν · Σ violations`.
    pub penalized: f64,
    /// Per-step positive part of the AO constraints.
    pub violations: Vec<f64>,
    pub trajectory: Trajectory,
}

impl Evaluation {
    pub fn total_violation(&self) -> f64 {
        self.violations.iter().sum()
    }
}

/// Stage costs and violations along an already simulated trajectory.
pub fn score_trajectory(traj: &Trajectory, spec: &OcpSpec) -> Result<(f64, Vec<f64>)> {
    let mut cost = 0.0;
    let mut violations = Vec::with_capacity(traj.steps());
    for (k, pair) in traj.states.windows(2).enumerate() {
        cost += stage_cost(&pair[1], &pair[0], traj.u[k], spec)?;
        violations.push(ao_violation(axial_offset(&pair[1].power)?, spec));
    }
    Ok((cost, violations))
}

/// Full-scale objective: simulate, then sum stage costs and AO violations.
pub fn evaluate_full(
    model: &PwrModel,
    u: &[f64],
    x0: &SimState,
    w: &[f64],
    spec: &OcpSpec,
) -> Result<Evaluation> {
    if u.len() != spec.horizon || w.len() != spec.horizon {
        return Err(SdoError::Domain(format!(
            "horizon {} but got {} controls and {} loads",
            spec.horizon,
            u.len(),
            w.len()
        )));
    }
    let trajectory = model.simulate(x0, u, w, spec.dt)?;
    let (cost, violations) = score_trajectory(&trajectory, spec)?;
    let penalized = cost + spec.nu * violations.iter().sum::<f64>();
    Ok(Evaluation {
        cost,
        penalized,
        violations,
        trajectory,
    })
}
