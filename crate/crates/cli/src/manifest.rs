//! What a training run consumed and produced.

use std::io::Read;
use std::path::{Path, PathBuf};

use hiformer_core::fsutil::atomic_write_bytes;
use hiformer_core::train::NormStats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const REVISION: &str = env!("HIFORMER_REVISION");

/// SHA-256 of the file contents, hex encoded.
pub fn fingerprint(path: &Path) -> Result<String, CliError> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: PathBuf,
    /// Resolved configuration, reusable with `--config`.
    pub config: PathBuf,
    pub history: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub revision: String,
    pub seed: u64,
    pub dataset: DatasetRef,
    /// Coordinates file fingerprint, when one was used.
    pub coords: Option<DatasetRef>,
    pub config: RunConfig,
    pub artifacts: Artifacts,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        atomic_write_bytes(path, &json).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_is_content_hash() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        std::fs::write(&a, b"abc").unwrap();
        assert_eq!(
            fingerprint(&a).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let err = fingerprint(&dir.path().join("missing")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            revision: REVISION.into(),
            seed: 4,
            dataset: DatasetRef {
                path: "d.csv".into(),
                sha256: "00".into(),
            },
            coords: None,
            config: RunConfig::default(),
            artifacts: Artifacts {
                checkpoint: "c".into(),
                config: "t".into(),
                history: "h".into(),
                manifest: "m".into(),
            },
            best_epoch: 3,
            best_val_loss: 0.25,
        };
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }
}

/// Run details stored inside a checkpoint so it can score new data alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub revision: String,
    pub dataset: DatasetRef,
    pub config: RunConfig,
    pub turbines: Vec<String>,
    pub weather_names: Vec<String>,
    pub stats: NormStats,
}
