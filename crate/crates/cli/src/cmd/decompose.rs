use std::io::Write;
use std::path::PathBuf;

use hiformer_core::data::Schema;
use hiformer_core::fsutil::atomic_write;
use hiformer_core::tensor::Tensor;
use hiformer_core::vmd::io::write_imfs;
use hiformer_core::vmd::{decompose_all, VmdConfig};

use super::{create_dir, load_dataset};
use crate::error::CliError;

#[derive(Debug, clap::Args)]
pub struct DecomposeArgs {
    /// Dataset CSV.
    pub input: PathBuf,
    #[arg(long, default_value = "generic")]
    pub schema: Schema,
    #[arg(long, default_value_t = 3)]
    pub modes: usize,
    #[arg(long, default_value_t = 2000.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Restrict to these turbines (repeatable); all by default.
    #[arg(long)]
    pub turbine: Vec<String>,
    /// First row of the decomposed span.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Rows in the span; to the end by default.
    #[arg(long)]
    pub len: Option<usize>,
    /// Subtract each series' mean first; the mean is reported as `offset`.
    #[arg(long)]
    pub demean: bool,
    /// Directory receiving summary.csv and one imfs_<turbine>.csv per turbine.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &DecomposeArgs) -> Result<(), CliError> {
    let cfg = VmdConfig {
        num_modes: args.modes,
        alpha: args.alpha,
        tau: args.tau,
        tol: args.tol,
        max_iters: args.max_iters,
        ..VmdConfig::default()
    };
    cfg.validate()?;
    let raw = load_dataset(&args.input, args.schema)?;
    let chosen: Vec<usize> = if args.turbine.is_empty() {
        (0..raw.num_turbines()).collect()
    } else {
        args.turbine
            .iter()
            .map(|id| {
                raw.turbines
                    .iter()
                    .position(|t| t == id)
                    .ok_or_else(|| CliError::Config(format!("turbine {id} is not in {}", args.input.display())))
            })
            .collect::<Result<_, _>>()?
    };
    let end = match args.len {
        Some(len) => args.start + len,
        None => raw.rows(),
    };
    if args.start >= end || end > raw.rows() {
        return Err(CliError::Config(format!(
            "rows {}..{end} are outside the {} available",
            args.start,
            raw.rows()
        )));
    }
    let span = end - args.start;
    let n = chosen.len();
    let offsets: Vec<f64> = chosen
        .iter()
        .map(|&j| {
            if args.demean {
                (args.start..end).map(|t| raw.power.at(&[t, j])).sum::<f64>() / span as f64
            } else {
                0.0
            }
        })
        .collect();
    let series = Tensor::from_fn(&[span, n], |idx| {
        raw.power.at(&[args.start + idx / n, chosen[idx % n]]) - offsets[idx % n]
    });
    let stacked = decompose_all(&series, &cfg)?;

    create_dir(&args.out)?;
    for (k, &j) in chosen.iter().enumerate() {
        let path = args.out.join(format!("imfs_{}.csv", raw.turbines[j]));
        atomic_write(&path, |w| write_imfs(&stacked.sets[k], w).map_err(std::io::Error::other))
            .map_err(|e| CliError::io(&path, e))?;
    }
    let summary = args.out.join("summary.csv");
    atomic_write(&summary, |w| {
        writeln!(w, "turbine,mode,center_freq,offset,iterations,converged")?;
        for (k, &j) in chosen.iter().enumerate() {
            let set = &stacked.sets[k];
            for (mode, f) in set.center_freqs.iter().enumerate() {
                writeln!(
                    w,
                    "{},{mode},{f},{},{},{}",
                    raw.turbines[j], offsets[k], set.iterations_used, set.converged
                )?;
            }
        }
        Ok(())
    })
    .map_err(|e| CliError::io(&summary, e))?;
    for (k, &j) in chosen.iter().enumerate() {
        let freqs: Vec<String> = stacked.sets[k].center_freqs.iter().map(|f| format!("{f:.5}")).collect();
        println!("turbine {}: center frequencies {}", raw.turbines[j], freqs.join(" "));
    }
    Ok(())
}
