//! Fixtures shared by the criterion benchmarks.

use sdo_core::surrogate::{Normalization, SurrogateNet};
use sdo_core::warmstart::{PwrSequenceCost, Scenario};
use sdo_core::{ModelParams, OcpSpec, PwrModel, Result, SurrogateConfig};

/// Default model plus a steady-state scenario with a ramp down to 70 % load.
pub struct Fixture {
    pub model: PwrModel,
    pub scenario: Scenario,
    pub net: SurrogateNet,
    pub cost: PwrSequenceCost,
}

impl Fixture {
    pub fn new() -> Result<Self> {
        let model = PwrModel::new(ModelParams::default())?;
        let spec = OcpSpec::default();
        let n = spec.horizon;
        let x0 = model.steady_state(1.0)?;
        let w: Vec<f64> = (0..n).map(|k| (1.0 - 0.3 * k as f64 / 12.0).max(0.7)).collect();
        let scenario = Scenario {
            id: 0,
            history: vec![x0.clone(), x0.clone()],
            w: w.clone(),
            spec: spec.clone(),
            perturbation: sdo_core::warmstart::Perturbation::LoadChange,
            prev_w: vec![1.0; n],
            prev_spec: spec.clone(),
            prev_solution: vec![0.0; n],
        };
        // kernel timing depends on the architecture, not the weights; a zero
        // output layer keeps predictions physical
        let dim = x0.dim();
        let cfg = SurrogateConfig {
            init_output_scale: 0.0,
            ..SurrogateConfig::default()
        };
        let net = SurrogateNet::new(cfg, dim, Normalization::identity(dim))?;
        let cost = PwrSequenceCost {
            spec,
            n_z: model.n_z(),
            nu: 10.0,
        };
        Ok(Self {
            model,
            scenario,
            net,
            cost,
        })
    }
}
