use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SdoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SdoError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("algebraic solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    Newton { iterations: usize, residual: f64 },

    #[error("simulation failed at step {step}: {source}")]
    Simulation {
        step: usize,
        #[source]
        source: Box<SdoError>,
    },

    #[error("steady state did not converge after {0} outer iterations")]
    SteadyState(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl SdoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SdoError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        SdoError::Simulation {
            step,
            source: Box::new(self),
        }
    }
}
