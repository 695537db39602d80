//! Optimization, normalization and evaluation.

mod adam;
mod metrics;
mod norm;
mod trainer;

use thiserror::Error;

pub use adam::{adam_step, adam_step_tree, AdamConfig, AdamState};
pub use metrics::{persistence_baseline, persistence_over, ErrorPair, MetricsAccumulator, MetricsReport};
pub use norm::{DegenerateChannel, NormStats};
pub use trainer::{
    clip_global_norm, evaluate, evaluate_windows, group_norms, predict_windows, train, write_history_csv, EpochRecord,
    LossKind, TrainConfig, TrainContext, TrainOutcome, DEFAULT_GRAD_CLIP,
};

use crate::data::{DataError, Split};
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("{0} split has no windows")]
    EmptySplit(Split),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (gradient norm {grad_norm}, parameter norms {group_norms:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        grad_norm: f64,
        group_norms: Vec<(String, f64)>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests;
