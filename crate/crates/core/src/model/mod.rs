//! The forecasting network: embeddings, encoder layers and projection.

pub mod checkpoint;
mod config;
mod forward;
pub mod layers;
mod params;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, GateMode, ModelConfig};
pub use forward::{bind, forward, predict, ModelInput};
pub use params::{
    AttentionParams, EncoderLayerParams, GateParams, HiformerParams, Linear, Mlp, NormAffine, ParamTree,
    ProjectionParams,
};

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(String),
    #[error("embedding: {0}")]
    Embedding(#[source] TensorError),
    #[error("encoder layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: TensorError,
    },
    #[error("projection: {0}")]
    Projection(#[source] TensorError),
}
