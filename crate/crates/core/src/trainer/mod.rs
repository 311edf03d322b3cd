//! Desk-scale data-parallel training harness.

mod corpus;
mod experiment;
mod model;
mod optim;
mod synthetic;
pub mod tape;

use thiserror::Error;

pub use corpus::{Corpus, VAL_FRACTION};
pub use experiment::{
    run_experiment, GradientPath, RunMetrics, RunStatus, TrainRunConfig, ValPoint, DATA_STREAM,
};
pub use model::{build_model, Batch, Model, TensorSlot, TinyModelConfig};
pub use optim::{Optimizer, OptimizerConfig};
pub use synthetic::{SyntheticGradientStream, SyntheticSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("{0}")]
    Invalid(String),
}
