//! Turbine datasets: CSV ingestion, chronological windowing, synthetic
//! generation and the windowed cache.

mod cache;
mod csv_io;
mod imf;
mod synth;
mod window;

use chrono::{NaiveDateTime, TimeDelta};
use thiserror::Error;

pub use cache::{read_cache, write_cache, CACHE_MAGIC};
pub use csv_io::{load_csv, write_csv, Schema, MAX_INTERPOLATED_GAP, SDWPF_WEATHER};
pub use imf::ImfBank;
pub use synth::{synth_generate, write_coords_csv, write_recipe_json, SynthRecipe};
pub use window::{make_windows, make_windows_with_stats, Batch, Split, SplitPlan, SplitRatio, TrainRows, WindowOptions, WindowedDataset};

use crate::tensor::Tensor;
use crate::vmd::VmdError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path}: line {line}: non-uniform timestamps, expected step {expected}s, found {found}s")]
    NonUniform {
        path: String,
        line: u64,
        expected: i64,
        found: i64,
    },
    #[error("{path}: turbine {turbine} covers {rows} rows, expected {expected} starting at {start}")]
    Ragged {
        path: String,
        turbine: String,
        rows: usize,
        expected: usize,
        start: NaiveDateTime,
    },
    #[error("{path}: no data rows")]
    Empty { path: String },
    #[error("{split} split has {rows} rows but one window needs {needed}")]
    SplitTooShort { split: Split, rows: usize, needed: usize },
    #[error("channel '{0}' is constant over the training rows")]
    DegenerateChannel(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("decomposition of window at row {row}: {source}")]
    Vmd {
        row: usize,
        #[source]
        source: VmdError,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Per-cell missing flags as read from the file, before any imputation.
/// Channel 0 is power, channel `1 + c` is weather feature `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    flags: Vec<bool>,
    turbines: usize,
    channels: usize,
}

impl MissingMask {
    pub fn new(rows: usize, turbines: usize, channels: usize) -> Self {
        Self {
            flags: vec![false; rows * turbines * channels],
            turbines,
            channels,
        }
    }

    fn index(&self, t: usize, n: usize, ch: usize) -> usize {
        (t * self.turbines + n) * self.channels + ch
    }

    pub fn get(&self, t: usize, n: usize, ch: usize) -> bool {
        self.flags[self.index(t, n, ch)]
    }

    pub fn set(&mut self, t: usize, n: usize, ch: usize, value: bool) {
        let i = self.index(t, n, ch);
        self.flags[i] = value;
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn channel_count(&self, ch: usize) -> usize {
        self.flags.chunks(self.channels).filter(|c| c[ch]).count()
    }
}

/// A uniformly sampled multi-turbine record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub timestamps: Vec<NaiveDateTime>,
    pub step: TimeDelta,
    pub turbines: Vec<String>,
    pub weather_names: Vec<String>,
    /// `T×N`
    pub power: Tensor<f64>,
    /// `T×N×C`
    pub weather: Tensor<f64>,
    pub missing: MissingMask,
    /// Rows touched by a gap too long to interpolate.
    pub invalid_rows: Vec<bool>,
    /// Negative power readings replaced by zero.
    pub clamped_negative: usize,
}

impl RawDataset {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn num_turbines(&self) -> usize {
        self.turbines.len()
    }

    pub fn num_weather(&self) -> usize {
        self.weather_names.len()
    }

    /// Checks the structural invariants shared by every constructor.
    pub fn validate(&self) -> Result<(), DataError> {
        let (t, n, c) = (self.rows(), self.num_turbines(), self.num_weather());
        let bad = |m: String| Err(DataError::InvalidParameter(m));
        if self.power.shape() != [t, n] {
            return bad(format!("power shape {:?}, expected [{t}, {n}]", self.power.shape()));
        }
        if self.weather.shape() != [t, n, c] {
            return bad(format!("weather shape {:?}, expected [{t}, {n}, {c}]", self.weather.shape()));
        }
        if self.invalid_rows.len() != t {
            return bad("invalid-row mask length differs from row count".into());
        }
        if self.step <= TimeDelta::zero() {
            return bad("time step must be positive".into());
        }
        if let Some(i) = (1..t).find(|&i| self.timestamps[i] - self.timestamps[i - 1] != self.step) {
            return bad(format!("timestamps not uniform at row {i}"));
        }
        Ok(())
    }
}
