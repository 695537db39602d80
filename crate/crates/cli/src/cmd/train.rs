use std::path::PathBuf;

use hiformer_core::data::{make_windows, write_cache, ImfBank};
use hiformer_core::fsutil::atomic_write_bytes;
use hiformer_core::model::{Checkpoint, HiformerParams};
use hiformer_core::tensor::Tensor;
use hiformer_core::train::{train, write_history_csv, TrainContext};

use super::{create_dir, load_dataset, node_embedding};
use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::manifest::{fingerprint, Artifacts, CheckpointMeta, DatasetRef, RunManifest, REVISION};

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Dataset CSV; may be omitted with --manifest.
    pub dataset: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    /// Directory receiving checkpoint.bin, config.toml, history.csv and
    /// manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the windowed dataset and its decompositions here.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

fn check_fingerprint(what: &str, recorded: &DatasetRef, found: &str) -> Result<(), CliError> {
    if recorded.sha256 != found {
        return Err(CliError::Config(format!(
            "{what} {} differs from the manifest: manifest fingerprint {}, file fingerprint {found}",
            recorded.path.display(),
            recorded.sha256
        )));
    }
    Ok(())
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let recorded = args.manifest.as_deref().map(RunManifest::load).transpose()?;
    let mut cfg = match (&recorded, &args.config) {
        (Some(m), _) => m.config.clone(),
        (None, Some(path)) => RunConfig::load(path)?,
        (None, None) => RunConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let dataset = match (&args.dataset, &recorded) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => m.dataset.path.clone(),
        (None, None) => return Err(CliError::Config("no dataset given".into())),
    };

    let sha = fingerprint(&dataset)?;
    let coords = match &cfg.data.coords {
        Some(p) => Some(DatasetRef {
            path: p.clone(),
            sha256: fingerprint(p)?,
        }),
        None => None,
    };
    if let Some(m) = &recorded {
        check_fingerprint("dataset", &m.dataset, &sha)?;
        if let (Some(then), Some(now)) = (&m.coords, &coords) {
            check_fingerprint("coordinates", then, &now.sha256)?;
        }
    }

    let raw = load_dataset(&dataset, cfg.data.schema)?;
    let ds = make_windows(
        &raw,
        cfg.data.history,
        cfg.data.horizon,
        cfg.data.ratio,
        cfg.data.window_options(),
    )?;
    let bank = ImfBank::build(&ds, &cfg.vmd)?;
    if let Some(path) = &args.cache {
        write_cache(path, &ds, Some(&bank))?;
    }
    let node = node_embedding(&raw.turbines, cfg.data.coords.as_deref(), cfg.data.epsilon, &cfg.node2vec)?;
    let model_cfg = cfg.model_config(raw.num_turbines(), raw.num_weather());
    model_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let ctx = TrainContext {
        dataset: &ds,
        imfs: &bank,
        node_embedding: &node,
    };
    let init = HiformerParams::<Tensor<f64>>::init(&model_cfg, cfg.train.seed);
    let outcome = train(init, &ctx, &model_cfg, &cfg.train)?;

    create_dir(&args.out)?;
    let artifacts = Artifacts {
        checkpoint: args.out.join("checkpoint.bin"),
        config: args.out.join("config.toml"),
        history: args.out.join("history.csv"),
        manifest: args.out.join("manifest.json"),
    };
    let dataset_ref = DatasetRef {
        path: dataset.clone(),
        sha256: sha,
    };
    let meta = CheckpointMeta {
        revision: REVISION.into(),
        dataset: dataset_ref.clone(),
        config: cfg.clone(),
        turbines: raw.turbines.clone(),
        weather_names: raw.weather_names.clone(),
        stats: ds.stats.clone(),
    };
    Checkpoint {
        config: model_cfg,
        params: outcome.params,
        node_embedding: node,
        metadata: serde_json::to_value(&meta).expect("metadata serializes"),
    }
    .save(&artifacts.checkpoint)?;
    atomic_write_bytes(&artifacts.config, cfg.to_toml().as_bytes()).map_err(|e| CliError::io(&artifacts.config, e))?;
    write_history_csv(&outcome.history, &artifacts.history).map_err(|e| CliError::io(&artifacts.history, e))?;
    let manifest = RunManifest {
        revision: REVISION.into(),
        seed: cfg.train.seed,
        dataset: dataset_ref,
        coords,
        config: cfg,
        artifacts: artifacts.clone(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
    };
    manifest.save(&artifacts.manifest)?;
    for rec in &outcome.history {
        eprintln!("epoch {:>4}  train {:.6}  val {:.6}", rec.epoch, rec.train_loss, rec.val_loss);
    }
    println!(
        "best epoch {} with validation loss {:.6}; wrote {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        args.out.display()
    );
    Ok(())
}
