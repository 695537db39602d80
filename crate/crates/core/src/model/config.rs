use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("model_dim {model_dim} is not divisible by num_heads {num_heads}")]
    HeadSplit { model_dim: usize, num_heads: usize },
    #[error("{0} must be positive")]
    ZeroExtent(&'static str),
    #[error("dropout must lie in [0, 1), got {0}")]
    Dropout(f64),
}

/// How the two attention paths are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    #[default]
    Learned,
    /// `ρ = 1`: only the frequency path reaches the output.
    ForceFrequency,
    /// `ρ = 0`: only the feature path reaches the output.
    ForceFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// History steps per window.
    pub history: usize,
    /// Forecast steps.
    pub horizon: usize,
    pub num_turbines: usize,
    pub num_weather: usize,
    pub num_modes: usize,
    /// Token width.
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub ffn_hidden: usize,
    /// Width of the node embedding fed to the spatial map.
    pub node_dims: usize,
    /// Hidden width of a two-layer projection; `None` projects linearly.
    pub projection_hidden: Option<usize>,
    pub gate: GateMode,
}

impl Default for ModelConfig {
    /// The micro configuration used for gradient checks.
    fn default() -> Self {
        Self {
            history: 24,
            horizon: 6,
            num_turbines: 4,
            num_weather: 2,
            num_modes: 3,
            model_dim: 8,
            num_heads: 2,
            num_layers: 1,
            dropout: 0.1,
            ffn_hidden: 16,
            node_dims: 8,
            projection_hidden: None,
            gate: GateMode::Learned,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let extents = [
            ("history", self.history),
            ("horizon", self.horizon),
            ("num_turbines", self.num_turbines),
            ("num_weather", self.num_weather),
            ("num_modes", self.num_modes),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("ffn_hidden", self.ffn_hidden),
            ("node_dims", self.node_dims),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::ZeroExtent(name));
        }
        if self.projection_hidden == Some(0) {
            return Err(ConfigError::ZeroExtent("projection_hidden"));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(ConfigError::HeadSplit {
                model_dim: self.model_dim,
                num_heads: self.num_heads,
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Dropout(self.dropout));
        }
        Ok(())
    }

    /// Closed-form number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let (p, d, f) = (self.history, self.model_dim, self.ffn_hidden);
        let linear = |i: usize, o: usize| o * i + o;
        let mlp = |i: usize, h: usize, o: usize| linear(i, h) + linear(h, o);
        let embeds = 3 * mlp(p, f, d) + linear(self.node_dims, d);
        let attention = |mix: usize| 2 * linear(2 * d, d) + linear(d, d) + mix;
        let layer = attention(self.num_modes)
            + attention(self.num_weather)
            + 2 * d * d
            + d * self.num_turbines
            + 4 * d
            + mlp(d, f, d);
        let projection = match self.projection_hidden {
            Some(h) => mlp(d, h, self.horizon),
            None => linear(d, self.horizon),
        };
        embeds + self.num_layers * layer + projection
    }
}
