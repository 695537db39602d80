use std::path::Path;

use hiformer_core::data::DataError;
use hiformer_core::graph::GraphError;
use hiformer_core::model::{CheckpointError, ModelError};
use hiformer_core::train::TrainError;
use hiformer_core::vmd::VmdError;
use thiserror::Error;

/// Failure of one command, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Config(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidParameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::InvalidParameter(_) | GraphError::TooFewNodes(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<VmdError> for CliError {
    fn from(e: VmdError) -> Self {
        match e {
            VmdError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Input(_) => CliError::Data(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Config(_) | TrainError::EmptySplit(_) => CliError::Config(e.to_string()),
            TrainError::EmptyEvaluation => CliError::Data(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Contract(_) | TrainError::Tensor(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
