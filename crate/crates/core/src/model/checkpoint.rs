//! Trained weights on disk: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian values of the
//! stored dtype (parameters in leaf order, node embedding last).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{HiformerParams, ModelConfig};
use crate::fsutil::atomic_write_bytes;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HIFCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint")]
    Magic { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {found}")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: stored as {stored}, requested {requested}")]
    DType { path: PathBuf, stored: DType, requested: DType },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("checkpoint does not fit its configuration: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LeafEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: DType,
    config: ModelConfig,
    leaves: Vec<LeafEntry>,
    node_embedding: Vec<usize>,
    metadata: serde_json::Value,
}

/// A model ready for inference, with free-form run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: ModelConfig,
    pub params: HiformerParams<Tensor<T>>,
    /// `node_dims×N`
    pub node_embedding: Tensor<T>,
    pub metadata: serde_json::Value,
}

fn layout<T: Scalar>(params: &HiformerParams<Tensor<T>>) -> Vec<LeafEntry> {
    params
        .leaves()
        .into_iter()
        .map(|(name, t)| LeafEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect()
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let expected = layout(&HiformerParams::<Tensor<T>>::init(&self.config, 0));
        let leaves = layout(&self.params);
        if leaves != expected {
            return Err(CheckpointError::Layout("parameters do not match the configuration".into()));
        }
        if self.node_embedding.shape() != [self.config.node_dims, self.config.num_turbines] {
            return Err(CheckpointError::Layout(format!(
                "node embedding has shape {:?}, expected [{}, {}]",
                self.node_embedding.shape(),
                self.config.node_dims,
                self.config.num_turbines
            )));
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            dtype: T::DTYPE,
            config: self.config.clone(),
            leaves,
            node_embedding: self.node_embedding.shape().to_vec(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.leaves() {
            t.data().iter().for_each(|v| v.write_le(&mut out));
        }
        self.node_embedding.data().iter().for_each(|v| v.write_le(&mut out));
        atomic_write_bytes(path, &out).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let corrupt = |message: String| CheckpointError::Corrupt {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic { path: path.to_path_buf() });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                path: path.to_path_buf(),
                found: header.version,
            });
        }
        if header.dtype != T::DTYPE {
            return Err(CheckpointError::DType {
                path: path.to_path_buf(),
                stored: header.dtype,
                requested: T::DTYPE,
            });
        }
        header
            .config
            .validate()
            .map_err(|e| CheckpointError::Layout(e.to_string()))?;
        let mut params = HiformerParams::<Tensor<T>>::init(&header.config, 0);
        if layout(&params) != header.leaves {
            return Err(CheckpointError::Layout(
                "stored parameter names or shapes differ from the configuration".into(),
            ));
        }
        let width = T::DTYPE.size_of();
        let mut rest = &bytes[16 + len..];
        let mut read = |count: usize| -> Result<Vec<T>, CheckpointError> {
            if rest.len() < count * width {
                return Err(corrupt("truncated tensor data".into()));
            }
            let (head, tail) = rest.split_at(count * width);
            rest = tail;
            Ok(head.chunks_exact(width).map(T::read_le).collect())
        };
        let mut failure = None;
        params.for_each_mut(|_, t| {
            if failure.is_some() {
                return;
            }
            match read(t.len()) {
                Ok(values) => t.data_mut().copy_from_slice(&values),
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let shape = header.node_embedding;
        if shape != [header.config.node_dims, header.config.num_turbines] {
            return Err(CheckpointError::Layout(format!("node embedding has shape {shape:?}")));
        }
        let node_embedding = Tensor::new(&shape, read(shape.iter().product())?).map_err(|e| corrupt(e.to_string()))?;
        if !rest.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            config: header.config,
            params,
            node_embedding,
            metadata: header.metadata,
        })
    }
}
