use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};

/// Physical and actuator constants of the axial PWR model.
///
/// `sigma_x` and `alpha_x` are expressed per unit *nodal* power, so their
/// defaults depend on `n_z`; use [`ModelParams::for_nodes`] to get a
/// consistent set for a node count other than 6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub n_z: usize,
    pub gamma_i: f64,
    pub gamma_x: f64,
    pub lambda_i: f64,
    pub lambda_x: f64,
    pub sigma_x: f64,
    /// Inter-node coupling coefficient `D`.
    pub coupling: f64,
    pub alpha_t: f64,
    pub alpha_d: f64,
    pub alpha_x: f64,
    pub alpha_b: f64,
    pub rod_worth: f64,
    /// Smoothing width of the rod insertion profile, in nodes.
    pub rod_shape_width: f64,
    /// Reference temperature program: `T_ref(w) = t0 + kappa_t * w / p_nom`.
    pub t0: f64,
    pub kappa_t: f64,
    pub p_nom: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Rod position of the calibrated nominal operating point.
    pub h_ref: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub cb_min: f64,
    pub cb_max: f64,
    /// Boron concentration of the calibrated nominal operating point.
    pub cb_ref: f64,
    /// Explicit RK4 sub-steps per control interval.
    pub n_sub: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

/// Ratio `sigma_x * P_node / lambda_x` at nominal power.
const BURNUP_TO_DECAY: f64 = 2.5;
/// Equilibrium xenon worth at full power.
const XENON_WORTH_NOMINAL: f64 = -0.028;

impl ModelParams {
    pub fn for_nodes(n_z: usize) -> Self {
        let gamma_i = 0.0639;
        let gamma_x = 0.00237;
        let lambda_i = 2.878e-5;
        let lambda_x = 2.107e-5;
        let p_nom = 1.0;
        let p_node = p_nom / n_z.max(1) as f64;
        let sigma_x = BURNUP_TO_DECAY * lambda_x / p_node;
        let x_eq = (gamma_x + gamma_i) * p_node / (lambda_x + sigma_x * p_node);
        Self {
            n_z,
            gamma_i,
            gamma_x,
            lambda_i,
            lambda_x,
            sigma_x,
            coupling: 0.05,
            alpha_t: -20e-5,
            alpha_d: -1e-3,
            alpha_x: XENON_WORTH_NOMINAL / x_eq,
            alpha_b: -10e-5,
            rod_worth: 0.02,
            rod_shape_width: 0.1,
            t0: 286.0,
            kappa_t: 20.0,
            p_nom,
            h_min: 0.0,
            h_max: 1000.0,
            h_ref: 500.0,
            u_min: -0.05,
            u_max: 0.05,
            cb_min: 0.0,
            cb_max: 2000.0,
            cb_ref: 1000.0,
            n_sub: 5,
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }

    /// Dimension of the flattened model-variable vector `(I, X, h_cr, P, C_b, T_in)`.
    pub fn state_dim(&self) -> usize {
        3 * self.n_z + 3
    }

    pub fn t_ref(&self, w: f64) -> f64 {
        self.t0 + self.kappa_t * w / self.p_nom
    }

    pub fn u_scale(&self) -> f64 {
        0.5 * (self.u_max - self.u_min)
    }

    pub fn clip_u(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    /// Collects every violated invariant instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_z < 2 || self.n_z % 2 != 0 {
            errs.push(format!("n_z must be even and >= 2 (got {})", self.n_z));
        }
        for (name, v) in [
            ("gamma_i", self.gamma_i),
            ("gamma_x", self.gamma_x),
            ("lambda_i", self.lambda_i),
            ("lambda_x", self.lambda_x),
            ("sigma_x", self.sigma_x),
            ("p_nom", self.p_nom),
            ("rod_shape_width", self.rod_shape_width),
            ("newton_tol", self.newton_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be strictly positive (got {v})"));
            }
        }
        if !(self.coupling > 0.0) {
            errs.push(format!("coupling must be positive (got {})", self.coupling));
        }
        if !(self.h_min < self.h_max) {
            errs.push(format!("h_min < h_max required ({} >= {})", self.h_min, self.h_max));
        }
        if !(self.h_min <= self.h_ref && self.h_ref <= self.h_max) {
            errs.push(format!("h_ref {} outside [h_min, h_max]", self.h_ref));
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            errs.push(format!(
                "u_min < 0 < u_max required (got [{}, {}])",
                self.u_min, self.u_max
            ));
        }
        if !(self.cb_min < self.cb_max) {
            errs.push(format!("cb_min < cb_max required ({} >= {})", self.cb_min, self.cb_max));
        }
        if self.n_sub == 0 {
            errs.push("n_sub must be >= 1".into());
        }
        if self.newton_max_iter == 0 {
            errs.push("newton_max_iter must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SdoError::Validation(errs))
        }
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::for_nodes(6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelParams::default().validate().unwrap();
        ModelParams::for_nodes(2).validate().unwrap();
    }

    #[test]
    fn xenon_worth_at_nominal() {
        let p = ModelParams::default();
        let pn = p.p_nom / p.n_z as f64;
        let x_eq = (p.gamma_x + p.gamma_i) * pn / (p.lambda_x + p.sigma_x * pn);
        assert!((p.alpha_x * x_eq + 0.028).abs() < 1e-12);
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut p = ModelParams::default();
        p.n_z = 3;
        p.lambda_i = -1.0;
        p.u_min = 0.1;
        match p.validate() {
            Err(SdoError::Validation(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
