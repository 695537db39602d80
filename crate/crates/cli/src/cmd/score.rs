//! Forecasts and metrics from a trained checkpoint.

use std::path::{Path, PathBuf};

use hiformer_core::data::{make_windows_with_stats, ImfBank, Schema, Split, WindowedDataset};
use hiformer_core::fsutil::{atomic_write, atomic_write_bytes};
use hiformer_core::model::Checkpoint;
use hiformer_core::tensor::Tensor;
use hiformer_core::train::{persistence_over, predict_windows, MetricsAccumulator, MetricsReport, TrainContext};
use serde::Serialize;

use super::load_dataset;
use crate::error::CliError;
use crate::manifest::{fingerprint, CheckpointMeta, DatasetRef};

#[derive(Debug, clap::Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset CSV to score.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the schema the checkpoint was trained with.
    #[arg(long)]
    pub schema: Option<Schema>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Leading forecast steps to score; the trained horizon by default.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Forecast CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Write power in the dataset's units instead of normalized values.
    #[arg(long)]
    pub raw_units: bool,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Metrics JSON; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub split: Split,
    pub horizon: usize,
    pub checkpoint: PathBuf,
    pub dataset: DatasetRef,
    pub trained_on: String,
    pub model: MetricsReport,
    pub persistence: MetricsReport,
}

struct Scored {
    ds: WindowedDataset,
    horizon: usize,
    /// Ascending window starts with `horizon×(B·N)` forecasts and targets.
    batches: Vec<(Vec<usize>, Tensor<f64>, Tensor<f64>)>,
    report: EvaluationReport,
}

fn leading_rows(t: &Tensor<f64>, rows: usize) -> Tensor<f64> {
    let cols = t.cols();
    Tensor::from_fn(&[rows, cols], |idx| t.at(&[idx / cols, idx % cols]))
}

fn score(args: &ScoreArgs) -> Result<Scored, CliError> {
    let ckpt = Checkpoint::<f64>::load(&args.checkpoint)?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.metadata.clone()).map_err(|e| {
        CliError::Config(format!("{}: checkpoint metadata: {e}", args.checkpoint.display()))
    })?;
    let cfg = &ckpt.config;
    let horizon = args.horizon.unwrap_or(cfg.horizon);
    if horizon == 0 || horizon > cfg.horizon {
        return Err(CliError::Config(format!(
            "horizon {horizon} is not within the trained horizon 1..={}",
            cfg.horizon
        )));
    }
    let sha = fingerprint(&args.dataset)?;
    let raw = load_dataset(&args.dataset, args.schema.unwrap_or(meta.config.data.schema))?;
    let mismatch = if raw.turbines != meta.turbines {
        Some(format!("turbines {:?} versus trained {:?}", raw.turbines, meta.turbines))
    } else if raw.weather_names != meta.weather_names {
        Some(format!(
            "weather channels {:?} versus trained {:?}",
            raw.weather_names, meta.weather_names
        ))
    } else {
        None
    };
    if let Some(detail) = mismatch {
        return Err(CliError::Config(format!(
            "checkpoint does not fit dataset: {detail}; checkpoint dataset fingerprint {}, given dataset fingerprint {sha}",
            meta.dataset.sha256
        )));
    }
    let data = &meta.config.data;
    let ds = make_windows_with_stats(
        &raw,
        cfg.history,
        cfg.horizon,
        data.ratio,
        data.window_options(),
        meta.stats.clone(),
    )?;
    let mut starts = ds.windows(args.split).to_vec();
    starts.sort_unstable();
    if starts.is_empty() {
        return Err(CliError::Data(format!("{} split has no windows", args.split)));
    }
    let bank = ImfBank::build_for(&ds, &starts, &meta.config.vmd)?;
    let ctx = TrainContext {
        dataset: &ds,
        imfs: &bank,
        node_embedding: &ckpt.node_embedding,
    };
    let mut batches = predict_windows(&ckpt.params, &ctx, cfg, &starts, args.batch_size)?;
    let mut acc = MetricsAccumulator::new(horizon, cfg.num_turbines);
    for (_, pred, target) in batches.iter_mut() {
        *pred = leading_rows(pred, horizon);
        *target = leading_rows(target, horizon);
        acc.add(pred, target)?;
    }
    let model = acc.finish()?;
    let persistence = persistence_over(&ds, &starts, horizon)?;
    let report = EvaluationReport {
        split: args.split,
        horizon,
        checkpoint: args.checkpoint.clone(),
        dataset: DatasetRef {
            path: args.dataset.clone(),
            sha256: sha,
        },
        trained_on: meta.dataset.sha256,
        model,
        persistence,
    };
    Ok(Scored {
        ds,
        horizon,
        batches,
        report,
    })
}

fn write_report(report: &EvaluationReport, path: &Path) -> Result<(), CliError> {
    let json = serde_json::to_vec_pretty(report).expect("report serializes");
    atomic_write_bytes(path, &json).map_err(|e| CliError::io(path, e))
}

fn summary(report: &EvaluationReport) -> String {
    format!(
        "{} split, {} windows, horizon {}: model MAE {:.6} MSE {:.6}; persistence MAE {:.6} MSE {:.6}",
        report.split,
        report.model.windows,
        report.horizon,
        report.model.mae,
        report.model.mse,
        report.persistence.mae,
        report.persistence.mse
    )
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let scored = score(&args.score)?;
    match &args.out {
        Some(path) => {
            write_report(&scored.report, path)?;
            println!("{}", summary(&scored.report));
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&scored.report).expect("report serializes")
        ),
    }
    Ok(())
}

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let Scored {
        ds,
        horizon,
        batches,
        report,
    } = score(&args.score)?;
    let (p, n) = (ds.history, ds.num_turbines());
    let units = |z: f64| if args.raw_units { ds.stats.inverse(0, z) } else { z };
    let mut rows = 0usize;
    atomic_write(&args.out, |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "turbine", "y_true", "y_pred", "origin", "lead"])?;
        for (starts, pred, target) in &batches {
            for (b, &s) in starts.iter().enumerate() {
                let origin = ds.timestamps[s + p - 1].format(TIME_FORMAT).to_string();
                for i in 0..horizon {
                    let at = ds.timestamps[s + p + i].format(TIME_FORMAT).to_string();
                    for j in 0..n {
                        let c = b * n + j;
                        w.write_record([
                            at.as_str(),
                            ds.turbines[j].as_str(),
                            &units(target.at(&[i, c])).to_string(),
                            &units(pred.at(&[i, c])).to_string(),
                            origin.as_str(),
                            &(i + 1).to_string(),
                        ])?;
                        rows += 1;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    })
    .map_err(|e| CliError::io(&args.out, e))?;
    if let Some(path) = &args.metrics {
        write_report(&report, path)?;
    }
    println!("wrote {rows} forecast rows to {}", args.out.display());
    println!("{}", summary(&report));
    Ok(())
}
