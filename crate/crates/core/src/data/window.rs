use std::fmt;
use std::ops::Range;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use super::{DataError, ImfBank, RawDataset};
use crate::model::ModelInput;
use crate::tensor::Tensor;
use crate::train::NormStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// Relative sizes of the chronological train, validation and test spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 7,
            val: 1,
            test: 2,
        }
    }
}

/// Row ranges of the three splits. Split `k` ends at
/// `⌊T · (r_0 + … + r_k) / Σr⌋`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub rows: usize,
    pub ratio: SplitRatio,
    pub bounds: [Range<usize>; 3],
}

impl SplitPlan {
    pub fn new(rows: usize, ratio: SplitRatio) -> Result<Self, DataError> {
        let parts = [ratio.train as u64, ratio.val as u64, ratio.test as u64];
        let total: u64 = parts.iter().sum();
        if total == 0 || ratio.train == 0 {
            return Err(DataError::InvalidParameter(format!("split ratio {ratio:?} needs a training share")));
        }
        let mut acc = 0u64;
        let mut ends = [0usize; 3];
        for (k, p) in parts.iter().enumerate() {
            acc += p;
            ends[k] = (rows as u64 * acc / total) as usize;
        }
        Ok(Self {
            rows,
            ratio,
            bounds: [0..ends[0], ends[0]..ends[1], ends[1]..ends[2]],
        })
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        self.bounds[split.index()].clone()
    }

    /// Read access to the training rows only; the sole input accepted by
    /// [`NormStats::fit`].
    pub fn train_rows<'a>(&self, raw: &'a RawDataset) -> TrainRows<'a> {
        TrainRows {
            raw,
            rows: self.range(Split::Train),
        }
    }
}

/// The training slice of a raw dataset.
pub struct TrainRows<'a> {
    raw: &'a RawDataset,
    rows: Range<usize>,
}

impl TrainRows<'_> {
    pub fn num_channels(&self) -> usize {
        1 + self.raw.num_weather()
    }

    pub fn channel_name(&self, ch: usize) -> String {
        if ch == 0 {
            "power".into()
        } else {
            self.raw.weather_names[ch - 1].clone()
        }
    }

    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    /// Visits every value of one channel on rows not marked invalid.
    pub fn for_each(&self, ch: usize, mut f: impl FnMut(f64)) {
        let n = self.raw.num_turbines();
        for t in self.rows.clone().filter(|&t| !self.raw.invalid_rows[t]) {
            for j in 0..n {
                f(if ch == 0 {
                    self.raw.power.at(&[t, j])
                } else {
                    self.raw.weather.at(&[t, j, ch - 1])
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowOptions {
    pub stride: usize,
    /// Largest admissible share of invalid rows inside one window.
    pub max_invalid_fraction: f64,
    /// Lets validation or test spans shorter than one window yield no
    /// windows instead of an error.
    pub allow_short_splits: bool,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            max_invalid_fraction: 0.0,
            allow_short_splits: false,
        }
    }
}

/// Normalized series with window start rows per split. A window starting
/// at row `s` reads history rows `s..s+P` and target rows `s+P..s+P+Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub history: usize,
    pub horizon: usize,
    pub timestamps: Vec<NaiveDateTime>,
    pub step: TimeDelta,
    pub turbines: Vec<String>,
    pub weather_names: Vec<String>,
    /// `T×N`, normalized.
    pub power: Tensor<f64>,
    /// `T×N×C`, normalized.
    pub weather: Tensor<f64>,
    pub stats: NormStats,
    pub plan: SplitPlan,
    pub(crate) starts: [Vec<usize>; 3],
}

/// Model input and aligned targets for a list of window starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: ModelInput<f64>,
    /// `Q × (B·N)`
    pub target: Tensor<f64>,
}

pub fn make_windows(
    raw: &RawDataset,
    history: usize,
    horizon: usize,
    ratio: SplitRatio,
    opts: WindowOptions,
) -> Result<WindowedDataset, DataError> {
    window_with(raw, history, horizon, ratio, opts, None)
}

/// Windows `raw` but normalizes with `stats` fitted elsewhere, as when
/// scoring new data with a trained model.
pub fn make_windows_with_stats(
    raw: &RawDataset,
    history: usize,
    horizon: usize,
    ratio: SplitRatio,
    opts: WindowOptions,
    stats: NormStats,
) -> Result<WindowedDataset, DataError> {
    if stats.num_channels() != 1 + raw.num_weather() {
        return Err(DataError::InvalidParameter(format!(
            "normalization covers {} channels, data has {}",
            stats.num_channels(),
            1 + raw.num_weather()
        )));
    }
    window_with(raw, history, horizon, ratio, opts, Some(stats))
}

fn window_with(
    raw: &RawDataset,
    history: usize,
    horizon: usize,
    ratio: SplitRatio,
    opts: WindowOptions,
    stats: Option<NormStats>,
) -> Result<WindowedDataset, DataError> {
    raw.validate()?;
    if history == 0 || horizon == 0 || opts.stride == 0 {
        return Err(DataError::InvalidParameter(
            "history, horizon and stride must be positive".into(),
        ));
    }
    let span = history + horizon;
    let plan = SplitPlan::new(raw.rows(), ratio)?;
    for split in Split::ALL {
        let rows = plan.range(split).len();
        let required = split == Split::Train || (rows > 0 && !opts.allow_short_splits);
        if required && rows < span {
            return Err(DataError::SplitTooShort {
                split,
                rows,
                needed: span,
            });
        }
    }
    let stats = match stats {
        Some(s) => s,
        None => NormStats::fit(&plan.train_rows(raw)).map_err(|e| DataError::DegenerateChannel(e.0))?,
    };

    let allowed = (opts.max_invalid_fraction * span as f64).floor() as usize;
    let starts = Split::ALL.map(|split| {
        let range = plan.range(split);
        if range.len() < span {
            return Vec::new();
        }
        (range.start..=range.end - span)
            .step_by(opts.stride)
            .filter(|&s| raw.invalid_rows[s..s + span].iter().filter(|&&b| b).count() <= allowed)
            .collect()
    });

    let (t, n, c) = (raw.rows(), raw.num_turbines(), raw.num_weather());
    let power = Tensor::from_fn(&[t, n], |i| stats.zscore(0, raw.power.data()[i]));
    let weather = Tensor::from_fn(&[t, n, c], |i| stats.zscore(1 + i % c.max(1), raw.weather.data()[i]));
    Ok(WindowedDataset {
        history,
        horizon,
        timestamps: raw.timestamps.clone(),
        step: raw.step,
        turbines: raw.turbines.clone(),
        weather_names: raw.weather_names.clone(),
        power,
        weather,
        stats,
        plan,
        starts,
    })
}

impl WindowedDataset {
    pub fn num_turbines(&self) -> usize {
        self.turbines.len()
    }

    pub fn num_weather(&self) -> usize {
        self.weather_names.len()
    }

    pub fn windows(&self, split: Split) -> &[usize] {
        &self.starts[split.index()]
    }

    /// Every window start across the splits, ascending.
    pub fn all_windows(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.starts.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Normalized power history `P` rows from `start` for one turbine.
    pub fn history_column(&self, start: usize, turbine: usize) -> Vec<f64> {
        (start..start + self.history).map(|t| self.power.at(&[t, turbine])).collect()
    }

    /// Assembles the column-token layout for the given windows.
    pub fn batch(&self, starts: &[usize], imfs: &ImfBank) -> Result<Batch, DataError> {
        let (p, q, n, c) = (self.history, self.horizon, self.num_turbines(), self.num_weather());
        let m = imfs.modes();
        let cols = starts.len() * n;
        let mut history = Tensor::zeros(&[p, cols]);
        let mut modes = Tensor::zeros(&[p, m * cols]);
        let mut weather = Tensor::zeros(&[p, c * cols]);
        let mut target = Tensor::zeros(&[q, cols]);
        for (b, &s) in starts.iter().enumerate() {
            if s + p + q > self.timestamps.len() {
                return Err(DataError::InvalidParameter(format!("window at row {s} runs past the data")));
            }
            let bank = imfs
                .get(s)
                .ok_or_else(|| DataError::InvalidParameter(format!("no decomposition for window at row {s}")))?;
            for j in 0..n {
                let col = b * n + j;
                for i in 0..p {
                    history.set(&[i, col], self.power.at(&[s + i, j]));
                    for k in 0..m {
                        modes.set(&[i, k * cols + col], bank[(i * m + k) * n + j]);
                    }
                    for k in 0..c {
                        weather.set(&[i, k * cols + col], self.weather.at(&[s + i, j, k]));
                    }
                }
                for i in 0..q {
                    target.set(&[i, col], self.power.at(&[s + p + i, j]));
                }
            }
        }
        Ok(Batch {
            input: ModelInput {
                history,
                imfs: modes,
                weather,
                batch: starts.len(),
            },
            target,
        })
    }
}
