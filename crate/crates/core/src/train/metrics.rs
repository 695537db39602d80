use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::{Split, WindowedDataset};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub mae: f64,
    pub mse: f64,
}

/// Errors in normalized units, aggregated and broken down by horizon step
/// and by turbine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub windows: usize,
    pub mae: f64,
    pub mse: f64,
    pub per_horizon: Vec<ErrorPair>,
    pub per_turbine: Vec<ErrorPair>,
}

/// Running sums of absolute and squared errors over `Q×N` cells.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    horizon: usize,
    turbines: usize,
    windows: usize,
    abs: Vec<f64>,
    sq: Vec<f64>,
}

impl MetricsAccumulator {
    pub fn new(horizon: usize, turbines: usize) -> Self {
        Self {
            horizon,
            turbines,
            windows: 0,
            abs: vec![0.0; horizon * turbines],
            sq: vec![0.0; horizon * turbines],
        }
    }

    /// Adds `Q × (B·N)` predictions against aligned targets.
    pub fn add(&mut self, pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<(), TrainError> {
        let (q, n) = (self.horizon, self.turbines);
        if pred.shape() != target.shape() || pred.rows() != q || pred.cols() % n != 0 {
            return Err(TrainError::Contract(format!(
                "prediction {:?} and target {:?} for horizon {q}, {n} turbines",
                pred.shape(),
                target.shape()
            )));
        }
        let cols = pred.cols();
        for i in 0..q {
            for c in 0..cols {
                let e = pred.at(&[i, c]) - target.at(&[i, c]);
                let cell = i * n + c % n;
                self.abs[cell] += e.abs();
                self.sq[cell] += e * e;
            }
        }
        self.windows += cols / n;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport, TrainError> {
        if self.windows == 0 {
            return Err(TrainError::EmptyEvaluation);
        }
        let (q, n, w) = (self.horizon, self.turbines, self.windows as f64);
        let pair = |cells: &mut dyn Iterator<Item = usize>, count: f64| {
            let (mut a, mut s) = (0.0, 0.0);
            for k in cells {
                a += self.abs[k];
                s += self.sq[k];
            }
            ErrorPair {
                mae: a / count,
                mse: s / count,
            }
        };
        let per_horizon = (0..q).map(|i| pair(&mut (0..n).map(|j| i * n + j), w * n as f64)).collect();
        let per_turbine = (0..n).map(|j| pair(&mut (0..q).map(|i| i * n + j), w * q as f64)).collect();
        let all = pair(&mut (0..q * n), w * (q * n) as f64);
        Ok(MetricsReport {
            windows: self.windows,
            mae: all.mae,
            mse: all.mse,
            per_horizon,
            per_turbine,
        })
    }
}

/// Errors of repeating the last observed value over the whole horizon.
pub fn persistence_baseline(ds: &WindowedDataset, split: Split) -> Result<MetricsReport, TrainError> {
    persistence_over(ds, ds.windows(split), ds.horizon)
}

/// Persistence errors over the first `horizon` steps of the given windows.
pub fn persistence_over(ds: &WindowedDataset, starts: &[usize], horizon: usize) -> Result<MetricsReport, TrainError> {
    let (p, n) = (ds.history, ds.num_turbines());
    if horizon == 0 || horizon > ds.horizon {
        return Err(TrainError::Config(format!(
            "horizon {horizon} is outside 1..={}",
            ds.horizon
        )));
    }
    let mut starts = starts.to_vec();
    starts.sort_unstable();
    let mut acc = MetricsAccumulator::new(horizon, n);
    for &s in &starts {
        let pred = Tensor::from_fn(&[horizon, n], |idx| ds.power.at(&[s + p - 1, idx % n]));
        let target = Tensor::from_fn(&[horizon, n], |idx| ds.power.at(&[s + p + idx / n, idx % n]));
        acc.add(&pred, &target)?;
    }
    acc.finish()
}
