//! Run configuration: one TOML file with `[data]`, `[model]`, `[train]`,
//! `[vmd]` and `[node2vec]` tables. Every key is optional.

use std::path::{Path, PathBuf};

use hiformer_core::data::{Schema, SplitRatio, WindowOptions};
use hiformer_core::graph::{Node2vecConfig, DEFAULT_EPSILON};
use hiformer_core::model::{GateMode, ModelConfig};
use hiformer_core::train::TrainConfig;
use hiformer_core::vmd::VmdConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub schema: Schema,
    pub history: usize,
    pub horizon: usize,
    pub ratio: SplitRatio,
    pub stride: usize,
    /// Largest share of invalid rows a window may contain.
    pub max_invalid_fraction: f64,
    /// Validation or test spans shorter than one window yield no windows.
    pub allow_short_splits: bool,
    /// `turbine_id,x,y` file; without it every turbine pair is weighted equally.
    pub coords: Option<PathBuf>,
    /// Kernel weights at or below this are dropped from the turbine graph.
    pub epsilon: f64,
}

impl DataSection {
    pub fn window_options(&self) -> WindowOptions {
        WindowOptions {
            stride: self.stride,
            max_invalid_fraction: self.max_invalid_fraction,
            allow_short_splits: self.allow_short_splits,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            schema: Schema::Generic,
            history: 48,
            horizon: 12,
            ratio: SplitRatio::default(),
            stride: 1,
            max_invalid_fraction: 0.0,
            allow_short_splits: false,
            coords: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Network shape. Widths tied to the data (turbines, channels, modes,
/// node embedding) are filled in from the other sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub ffn_hidden: usize,
    pub projection_hidden: Option<usize>,
    pub gate: GateMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            model_dim: 32,
            num_heads: 4,
            num_layers: 2,
            dropout: 0.1,
            ffn_hidden: 64,
            projection_hidden: None,
            gate: GateMode::Learned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub vmd: VmdConfig,
    pub node2vec: Node2vecConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            vmd: VmdConfig::with_modes(3),
            node2vec: Node2vecConfig {
                dims: 16,
                ..Node2vecConfig::default()
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self, num_turbines: usize, num_weather: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            history: self.data.history,
            horizon: self.data.horizon,
            num_turbines,
            num_weather,
            num_modes: self.vmd.num_modes,
            model_dim: m.model_dim,
            num_heads: m.num_heads,
            num_layers: m.num_layers,
            dropout: m.dropout,
            ffn_hidden: m.ffn_hidden,
            node_dims: self.node2vec.dims,
            projection_hidden: m.projection_hidden,
            gate: m.gate,
        }
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model_config(1, 1).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(CliError::from)?;
        self.vmd.validate().map_err(CliError::from)?;
        self.node2vec.validate().map_err(CliError::from)?;
        if self.data.history < self.vmd.min_len() {
            return Err(CliError::Config(format!(
                "history {} is shorter than the {} samples needed to decompose into {} modes",
                self.data.history,
                self.vmd.min_len(),
                self.vmd.num_modes
            )));
        }
        Ok(())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct Overrides {
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub schema: Option<Schema>,
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub coords: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_parser = parse_gate)]
    pub gate: Option<GateMode>,
    /// Node embedding width.
    #[arg(long)]
    pub node_dims: Option<usize>,
}

fn parse_gate(s: &str) -> Result<GateMode, String> {
    match s {
        "learned" => Ok(GateMode::Learned),
        "frequency" | "force_frequency" => Ok(GateMode::ForceFrequency),
        "feature" | "force_feature" => Ok(GateMode::ForceFeature),
        _ => Err(format!("unknown gate '{s}' (learned, frequency, feature)")),
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut cfg.train.seed, &self.seed);
        set(&mut cfg.data.schema, &self.schema);
        set(&mut cfg.data.history, &self.history);
        set(&mut cfg.data.horizon, &self.horizon);
        if self.coords.is_some() {
            cfg.data.coords = self.coords.clone();
        }
        set(&mut cfg.train.epochs, &self.epochs);
        set(&mut cfg.train.lr, &self.lr);
        set(&mut cfg.train.batch_size, &self.batch_size);
        if self.grad_clip.is_some() {
            cfg.train.grad_clip = self.grad_clip;
        }
        if self.patience.is_some() {
            cfg.train.early_stop_patience = self.patience;
        }
        set(&mut cfg.vmd.num_modes, &self.modes);
        set(&mut cfg.model.model_dim, &self.model_dim);
        set(&mut cfg.model.num_heads, &self.heads);
        set(&mut cfg.model.num_layers, &self.layers);
        set(&mut cfg.model.ffn_hidden, &self.ffn_hidden);
        set(&mut cfg.model.dropout, &self.dropout);
        set(&mut cfg.model.gate, &self.gate);
        set(&mut cfg.node2vec.dims, &self.node_dims);
    }
}
