use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TrainRows;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("channel '{0}' is constant over the training rows")]
pub struct DegenerateChannel(pub String);

/// Per-channel z-score statistics. Channel 0 is power, channel `1 + c` is
/// weather feature `c`. Built only from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean and standard deviation of every channel, pooled over
    /// turbines and the valid training rows.
    pub fn fit(rows: &TrainRows<'_>) -> Result<Self, DegenerateChannel> {
        let mut channels = Vec::new();
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for ch in 0..rows.num_channels() {
            let (mut count, mut sum) = (0usize, 0.0);
            rows.for_each(ch, |v| {
                count += 1;
                sum += v;
            });
            let name = rows.channel_name(ch);
            if count == 0 {
                return Err(DegenerateChannel(name));
            }
            let m = sum / count as f64;
            let mut ss = 0.0;
            rows.for_each(ch, |v| ss += (v - m) * (v - m));
            let s = (ss / count as f64).sqrt();
            if !(s > 0.0 && s.is_finite()) {
                return Err(DegenerateChannel(name));
            }
            channels.push(name);
            mean.push(m);
            std.push(s);
        }
        Ok(Self { channels, mean, std })
    }

    pub fn num_channels(&self) -> usize {
        self.mean.len()
    }

    pub fn zscore(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }

    pub fn inverse(&self, channel: usize, z: f64) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }
}
