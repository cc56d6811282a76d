//! Run configuration: one validated view over every tunable, read from TOML
//! or JSON. Keys missing from the file keep their defaults; unknown keys are
//! rejected, all of them at once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{BenchConfig, SweepConfig};
use crate::datagen::{ScenarioConfig, SurrogateDataConfig};
use crate::error::{Result, SdoError};
use crate::io::hash_json;
use crate::ocp::OcpSpec;
use crate::optim::OptBudget;
use crate::pwr::ModelParams;
use crate::surrogate::SurrogateConfig;
use crate::warmstart::BcConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    pub surrogate: SurrogateDataConfig,
    pub scenarios: ScenarioConfig,
    /// Scenarios in the benchmark suite.
    pub bench_count: usize,
    /// Solved scenarios in the behaviour-cloning dataset.
    pub bc_count: usize,
    /// Full-scale iterations of each expert solve.
    pub bc_expert_iterations: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateDataConfig::default(),
            scenarios: ScenarioConfig::default(),
            bench_count: 20,
            bc_count: 100,
            bc_expert_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for finite-difference gradients.
    pub threads: usize,
    pub model: ModelParams,
    pub ocp: OcpSpec,
    pub surrogate: SurrogateConfig,
    pub budget: OptBudget,
    pub datagen: DatagenConfig,
    pub bc: BcConfig,
    pub bench: BenchConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            model: ModelParams::default(),
            ocp: OcpSpec::default(),
            surrogate: SurrogateConfig::default(),
            budget: OptBudget::default(),
            datagen: DatagenConfig::default(),
            bc: BcConfig::default(),
            bench: BenchConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Keys present in `given` but not in `reference`, as dotted paths.
/// Descent stops where the reference holds a null or an empty map, which
/// mark optional or free-form entries.
fn unknown_keys(given: &serde_json::Value, reference: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    let (Some(g), Some(r)) = (given.as_object(), reference.as_object()) else {
        return;
    };
    if r.is_empty() {
        return;
    }
    for (k, v) in g {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            None => out.push(path),
            Some(rv) if !rv.is_null() => unknown_keys(v, rv, &path, out),
            Some(_) => {}
        }
    }
}

fn prefixed(prefix: &str, r: Result<()>, out: &mut Vec<String>) {
    match r {
        Ok(()) => {}
        Err(SdoError::Validation(list)) => out.extend(list.into_iter().map(|m| format!("{prefix}: {m}"))),
        Err(e) => out.push(format!("{prefix}: {e}")),
    }
}

impl RunConfig {
    /// Parses TOML (or JSON for a `.json` path) on top of the defaults.
    pub fn from_str(text: &str, json: bool) -> Result<Self> {
        let given: serde_json::Value = if json {
            serde_json::from_str(text)?
        } else {
            serde_json::to_value(toml::from_str::<toml::Value>(text)?)?
        };
        let reference = serde_json::to_value(RunConfig::default())?;
        let mut unknown = Vec::new();
        unknown_keys(&given, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(SdoError::Validation(unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect()));
        }
        Ok(serde_json::from_value(given)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SdoError::io(path, e))?;
        Self::from_str(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SdoError::Config(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        hash_json(self)
    }

    /// Benchmark settings with the iteration budget applied.
    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            iterations: self.budget.max_iterations,
            record_at: self.budget.record_at.clone(),
            threads: self.threads,
            ..self.bench.clone()
        }
    }

    /// Checks every section and reports all problems together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.threads == 0 {
            errs.push("threads: must be >= 1".into());
        }
        prefixed("model", self.model.validate(), &mut errs);
        prefixed("ocp", self.ocp.validate(), &mut errs);
        prefixed("surrogate", self.surrogate.validate(), &mut errs);
        prefixed("budget", self.budget.validate(), &mut errs);
        prefixed("bench", self.bench_config().validate(), &mut errs);
        let d = &self.datagen;
        if d.surrogate.count == 0 {
            errs.push("datagen.surrogate.count: must be >= 1".into());
        }
        if d.surrogate.steps < self.surrogate.context + self.surrogate.rollout + 1 {
            errs.push(format!(
                "datagen.surrogate.steps: {} too short for context {} and rollout {}",
                d.surrogate.steps, self.surrogate.context, self.surrogate.rollout
            ));
        }
        if d.bench_count == 0 {
            errs.push("datagen.bench_count: must be >= 1".into());
        }
        if d.bc_count < 2 {
            errs.push("datagen.bc_count: behaviour cloning needs >= 2 examples".into());
        }
        if d.scenarios.history < self.surrogate.context + 1 {
            errs.push(format!(
                "datagen.scenarios.history: {} states cannot feed a context window of {}",
                d.scenarios.history, self.surrogate.context
            ));
        }
        if self.bc.w_stride == 0 {
            errs.push("bc.w_stride: must be >= 1".into());
        }
        if self.bc.context + 1 > d.scenarios.history {
            errs.push(format!("bc.context: {} exceeds the stored scenario history", self.bc.context));
        }
        if let Some(f) = self.sweep.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            errs.push(format!("sweep.fractions: {f} outside (0, 1]"));
        }
        if !(self.sweep.sdo_fraction > 0.0 && self.sweep.sdo_fraction < 1.0) {
            errs.push(format!("sweep.sdo_fraction: {} outside (0, 1)", self.sweep.sdo_fraction));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SdoError::Validation(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_str(&text, false).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_str(&json, true).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_str("seed = 9\n[ocp]\nhorizon = 24\n", false).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.ocp.horizon, 24);
        assert_eq!(c.ocp.dt, OcpSpec::default().dt);
        assert_eq!(c.model, ModelParams::default());
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let err = RunConfig::from_str("sed = 1\n[ocp]\nhorizn = 3\n[bench]\nstrategies = []\ncolour = 2\n", false)
            .unwrap_err();
        let SdoError::Validation(list) = err else { panic!("{err}") };
        assert_eq!(list.len(), 3, "{list:?}");
        for k in ["sed", "ocp.horizn", "bench.colour"] {
            assert!(list.iter().any(|m| m.contains(&format!("`{k}`"))), "{k} missing from {list:?}");
        }
    }

    #[test]
    fn validation_collects_all_problems() {
        let mut c = RunConfig::default();
        c.threads = 0;
        c.datagen.bench_count = 0;
        c.sweep.sdo_fraction = 1.5;
        let SdoError::Validation(list) = c.validate().unwrap_err() else { panic!() };
        assert!(list.len() >= 3, "{list:?}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
