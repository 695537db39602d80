use std::collections::HashMap;

use rayon::prelude::*;

use super::{DataError, WindowedDataset};
use crate::vmd::{Decomposer, VmdConfig, VmdError};

/// Decomposed history of every window, keyed by window start. Each window
/// holds `P·M·N` values laid out `[step][mode][turbine]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImfBank {
    modes: usize,
    history: usize,
    turbines: usize,
    by_start: HashMap<usize, Vec<f64>>,
}

impl ImfBank {
    /// Decomposes each turbine's normalized history of every window
    /// independently, so no mode ever sees rows beyond its window.
    pub fn build(ds: &WindowedDataset, cfg: &VmdConfig) -> Result<Self, DataError> {
        Self::build_for(ds, &ds.all_windows(), cfg)
    }

    /// Like [`ImfBank::build`], restricted to the given window starts.
    pub fn build_for(ds: &WindowedDataset, starts: &[usize], cfg: &VmdConfig) -> Result<Self, DataError> {
        cfg.validate().map_err(|e| DataError::InvalidParameter(e.to_string()))?;
        let (p, n, m) = (ds.history, ds.num_turbines(), cfg.num_modes);
        if let Some(&bad) = starts.iter().find(|&&s| s + ds.history + ds.horizon > ds.timestamps.len()) {
            return Err(DataError::InvalidParameter(format!("window start {bad} runs past the data")));
        }
        let entries = starts
            .par_iter()
            .map_init(Decomposer::<f64>::new, |dec, &s| {
                let mut block = vec![0.0; p * m * n];
                for j in 0..n {
                    let set = dec.decompose(&ds.history_column(s, j), cfg).map_err(|e| DataError::Vmd {
                        row: s,
                        source: VmdError::Turbine {
                            turbine: j,
                            source: Box::new(e),
                        },
                    })?;
                    for (k, mode) in set.modes.iter().enumerate() {
                        for (i, v) in mode.iter().enumerate() {
                            block[(i * m + k) * n + j] = *v;
                        }
                    }
                }
                Ok((s, block))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Self {
            modes: m,
            history: p,
            turbines: n,
            by_start: entries.into_iter().collect(),
        })
    }

    pub fn from_parts(modes: usize, history: usize, turbines: usize, by_start: HashMap<usize, Vec<f64>>) -> Self {
        Self {
            modes,
            history,
            turbines,
            by_start,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn turbines(&self) -> usize {
        self.turbines
    }

    pub fn len(&self) -> usize {
        self.by_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_start.is_empty()
    }

    pub fn get(&self, start: usize) -> Option<&[f64]> {
        self.by_start.get(&start).map(Vec::as_slice)
    }

    /// Window starts in ascending order.
    pub fn starts(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.by_start.keys().copied().collect();
        s.sort_unstable();
        s
    }
}
