//! Surrogate Dynamics Optimization: warm starts for single-shooting NMPC
//! computed on a learned surrogate, then refined on the full-scale model.

pub mod bench;
pub mod bound;
pub mod config;
pub mod datagen;
pub mod error;
pub mod io;
pub mod nn;
pub mod ocp;
pub mod optim;
pub mod pwr;
pub mod surrogate;
pub mod warmstart;

pub use error::{Result, SdoError};
pub use ocp::{ControlBox, ControlSequence, CostKind, Evaluation, LoadProfile, OcpSpec};
pub use optim::{AdamConfig, Objective, ObjectiveValue, OptBudget, OptTrace, StepRule};
pub use pwr::{CallCounter, ExchangeMatrix, ModelParams, PwrModel, SimState, Trajectory};
pub use surrogate::{SurrogateConfig, SurrogateNet, TrainRecord};
