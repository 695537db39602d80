use std::path::PathBuf;

use hiformer_core::data::{synth_generate, write_coords_csv, write_csv, write_recipe_json, SynthRecipe};

use super::create_dir;
use crate::error::CliError;

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub turbines: usize,
    #[arg(long, default_value_t = 4000)]
    pub rows: usize,
    /// Weather channels; the first is wind speed.
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with generator settings; missing keys keep their defaults.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    /// Weight of the lagged wind anomaly in power.
    #[arg(long)]
    pub coupling: Option<f64>,
    /// Scale of every random term.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Grid spacing of the written coordinates.
    #[arg(long, default_value_t = 400.0)]
    pub spacing: f64,
    /// Directory receiving data.csv, recipe.json and coords.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SynthArgs) -> Result<(), CliError> {
    let mut recipe = match &args.recipe {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SynthRecipe>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthRecipe::default(),
    };
    if let Some(c) = args.coupling {
        recipe.coupling = c;
    }
    if let Some(a) = args.noise {
        recipe.noise_amplitude = a;
    }
    let raw = synth_generate(args.turbines, args.rows, args.channels, args.seed, &recipe)?;
    create_dir(&args.out)?;
    write_csv(&raw, &args.out.join("data.csv"))?;
    write_recipe_json(&args.out.join("recipe.json"), &recipe, &raw, args.seed)?;
    write_coords_csv(&args.out.join("coords.csv"), &raw.turbines, args.spacing)?;
    println!(
        "wrote {} rows x {} turbines x {} weather channels to {}",
        raw.rows(),
        raw.num_turbines(),
        raw.num_weather(),
        args.out.display()
    );
    Ok(())
}
