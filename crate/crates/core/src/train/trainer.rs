use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step_tree, AdamConfig, AdamState};
use super::metrics::{MetricsAccumulator, MetricsReport};
use super::TrainError;
use crate::data::{ImfBank, Split, WindowedDataset};
use crate::fsutil::atomic_write;
use crate::model::{bind, forward, predict, HiformerParams, ModelConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient norm cap.
    pub grad_clip: Option<f64>,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop_patience: Option<usize>,
    pub loss: LossKind,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            grad_clip: None,
            early_stop_patience: None,
            loss: LossKind::Mse,
            adam: AdamConfig::default(),
        }
    }
}

/// Clip threshold used when clipping is switched on without a value.
pub const DEFAULT_GRAD_CLIP: f64 = 5.0;

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return bad(format!("invalid Adam settings {:?}", self.adam));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Everything a forward pass needs besides the parameters.
#[derive(Clone, Copy)]
pub struct TrainContext<'a> {
    pub dataset: &'a WindowedDataset,
    pub imfs: &'a ImfBank,
    /// `dims×N` node embedding, held fixed.
    pub node_embedding: &'a Tensor<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: HiformerParams<Tensor<f64>>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn group_of(name: &str) -> String {
    let mut parts = name.split('.');
    match parts.next() {
        Some("layers") => format!("layers.{}", parts.next().unwrap_or("?")),
        Some(head) => head.to_string(),
        None => String::new(),
    }
}

/// Parameter norm per top-level group (embeddings, each layer, projection).
pub fn group_norms(params: &HiformerParams<Tensor<f64>>) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for (name, t) in params.leaves() {
        let g = group_of(&name);
        let sq = t.norm_sq();
        match out.last_mut() {
            Some((last, acc)) if *last == g => *acc += sq,
            _ => out.push((g, sq)),
        }
    }
    out.into_iter().map(|(g, s)| (g, s.sqrt())).collect()
}

/// Rescales `grads` so their joint norm is at most `max`. Returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f64>], max: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Forecasts for the given windows in evaluation mode, `Q × (B·N)` per
/// chunk of at most `batch_size` windows, in the order given.
pub fn predict_windows(
    params: &HiformerParams<Tensor<f64>>,
    ctx: &TrainContext<'_>,
    cfg: &ModelConfig,
    starts: &[usize],
    batch_size: usize,
) -> Result<Vec<(Vec<usize>, Tensor<f64>, Tensor<f64>)>, TrainError> {
    let mut out = Vec::new();
    for chunk in starts.chunks(batch_size.max(1)) {
        let batch = ctx.dataset.batch(chunk, ctx.imfs)?;
        let pred = predict(params, ctx.node_embedding, &batch.input, cfg)?;
        out.push((chunk.to_vec(), pred, batch.target));
    }
    Ok(out)
}

/// Metrics over a list of windows. Windows are visited in ascending start
/// order so the result does not depend on the order supplied.
pub fn evaluate_windows(
    params: &HiformerParams<Tensor<f64>>,
    ctx: &TrainContext<'_>,
    cfg: &ModelConfig,
    starts: &[usize],
    batch_size: usize,
) -> Result<MetricsReport, TrainError> {
    let mut sorted = starts.to_vec();
    sorted.sort_unstable();
    let mut acc = MetricsAccumulator::new(cfg.horizon, cfg.num_turbines);
    for (_, pred, target) in predict_windows(params, ctx, cfg, &sorted, batch_size)? {
        acc.add(&pred, &target)?;
    }
    acc.finish()
}

pub fn evaluate(
    params: &HiformerParams<Tensor<f64>>,
    ctx: &TrainContext<'_>,
    cfg: &ModelConfig,
    split: Split,
    batch_size: usize,
) -> Result<MetricsReport, TrainError> {
    evaluate_windows(params, ctx, cfg, ctx.dataset.windows(split), batch_size)
}

fn selection_loss(kind: LossKind, report: &MetricsReport) -> f64 {
    match kind {
        LossKind::Mse => report.mse,
        LossKind::Mae => report.mae,
    }
}

/// Minibatch Adam over the training windows with per-epoch seeded shuffles.
pub fn train(
    init: HiformerParams<Tensor<f64>>,
    ctx: &TrainContext<'_>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model_cfg.validate().map_err(crate::model::ModelError::from)?;
    let ds = ctx.dataset;
    if ds.num_turbines() != model_cfg.num_turbines
        || ds.history != model_cfg.history
        || ds.horizon != model_cfg.horizon
        || ds.num_weather() != model_cfg.num_weather
        || ctx.imfs.modes() != model_cfg.num_modes
    {
        return Err(TrainError::Config(format!(
            "dataset (N={}, P={}, Q={}, C={}, M={}) does not match the model configuration",
            ds.num_turbines(),
            ds.history,
            ds.horizon,
            ds.num_weather(),
            ctx.imfs.modes()
        )));
    }
    let mut order = ds.windows(Split::Train).to_vec();
    if order.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if ds.windows(Split::Val).is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }

    let mut params = init;
    let mut state = AdamState::for_params(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (params.clone(), 0usize, f64::INFINITY);
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = ds.batch(chunk, ctx.imfs)?;
            let tape = Tape::new();
            let bound = bind(&tape, &params);
            let node = tape.constant(ctx.node_embedding.clone());
            let pred = forward(&bound, node, &batch.input, model_cfg, true, &mut dropout_rng)?;
            let loss = match cfg.loss {
                LossKind::Mse => pred.mse(batch.target)?,
                LossKind::Mae => pred.mae(batch.target)?,
            };
            let value = loss.item();
            let grads = tape.backward(loss)?;
            let mut flat: Vec<Tensor<f64>> = bound.leaves().iter().map(|(_, v)| grads.get_or_zeros(**v)).collect();
            let grad_norm = flat.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
            if !value.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    loss: value,
                    grad_norm,
                    group_norms: group_norms(&params),
                });
            }
            if let Some(max) = cfg.grad_clip {
                clip_global_norm(&mut flat, max);
            }
            drop(bound);
            adam_step_tree(&mut params, &flat, &mut state, cfg.lr, &cfg.adam)?;
            total += value * chunk.len() as f64;
            seen += chunk.len();
        }
        let val = evaluate(&params, ctx, model_cfg, Split::Val, cfg.batch_size.max(64))?;
        let val_loss = selection_loss(cfg.loss, &val);
        if !val_loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
                grad_norm: f64::NAN,
                group_norms: group_norms(&params),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / seen as f64,
            val_loss,
            lr: cfg.lr,
        });
        if val_loss < best.2 {
            best = (params.clone(), epoch, val_loss);
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    let (params, best_epoch, best_val_loss) = if best.1 == 0 { (params, 0, f64::INFINITY) } else { best };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        best_val_loss,
    })
}

/// `epoch,train_loss,val_loss,lr` rows.
pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> std::io::Result<()> {
    atomic_write(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        for rec in history {
            w.serialize(rec)?;
        }
        w.flush()
    })
}
