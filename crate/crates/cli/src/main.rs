//! `hiformer`: data generation, decomposition, graph embedding, training
//! and scoring from the command line.
//!
//! Exit codes: 0 success, 2 data error, 3 configuration error, 4 numerical
//! failure during training.

mod cmd;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hiformer", version, about = "Multi-turbine wind power forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic weather-coupled wind farm dataset.
    Synth(cmd::synth::SynthArgs),
    /// Split each turbine's power series into modes.
    Decompose(cmd::decompose::DecomposeArgs),
    /// Train node2vec vectors for a turbine graph.
    EmbedGraph(cmd::embed::EmbedArgs),
    /// Train a forecaster and write checkpoint, history and manifest.
    Train(cmd::train::TrainArgs),
    /// Write forecasts for one split of a dataset.
    Predict(cmd::score::PredictArgs),
    /// Score a checkpoint against persistence on one split.
    Evaluate(cmd::score::EvaluateArgs),
}

/// Caps worker threads at `HIFORMER_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("HIFORMER_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("HIFORMER_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd::synth::run(a),
        Command::Decompose(a) => cmd::decompose::run(a),
        Command::EmbedGraph(a) => cmd::embed::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Predict(a) => cmd::score::predict(a),
        Command::Evaluate(a) => cmd::score::evaluate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hiformer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
