use std::path::PathBuf;

use hiformer_core::fsutil::atomic_write;
use hiformer_core::graph::{
    biased_walks, build_default_adjacency, read_adjacency_csv, read_coords_csv, train_embeddings,
    write_embeddings_csv, Node2vecConfig, TurbineGraph, DEFAULT_EPSILON,
};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("graph").required(true).args(["coords", "adjacency", "turbines"])))]
pub struct EmbedArgs {
    /// `turbine_id,x,y` file; edges follow a Gaussian distance kernel.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Square weight matrix without header.
    #[arg(long)]
    pub adjacency: Option<PathBuf>,
    /// Equal weights between this many turbines.
    #[arg(long)]
    pub turbines: Option<usize>,
    /// Run config whose `[node2vec]` table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// CSV of `turbine,e0,…` rows.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &EmbedArgs) -> Result<(), CliError> {
    let mut cfg: Node2vecConfig = match &args.config {
        Some(path) => RunConfig::load(path)?.node2vec,
        None => RunConfig::default().node2vec,
    };
    if let Some(d) = args.dims {
        cfg.dims = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (graph, ids) = if let Some(path) = &args.coords {
        let sites = read_coords_csv(path)?;
        let coords: Vec<[f64; 2]> = sites.iter().map(|(_, xy)| *xy).collect();
        (
            build_default_adjacency(&coords, args.epsilon)?,
            sites.into_iter().map(|(id, _)| id).collect(),
        )
    } else if let Some(path) = &args.adjacency {
        let g = read_adjacency_csv(path)?;
        let ids = (1..=g.n()).map(|k| k.to_string()).collect();
        (g, ids)
    } else {
        let n = args.turbines.expect("one graph source is required");
        (TurbineGraph::uniform(n)?, (1..=n).map(|k| k.to_string()).collect::<Vec<_>>())
    };
    let walks = biased_walks(&graph, &cfg)?;
    let emb = train_embeddings(&walks, graph.n(), &cfg)?;
    atomic_write(&args.out, |w| write_embeddings_csv(&emb, &ids, w).map_err(std::io::Error::other))
        .map_err(|e| CliError::io(&args.out, e))?;
    println!(
        "embedded {} turbines ({} edges) in {} dims, final loss {:.4}",
        graph.n(),
        graph.edge_count(),
        cfg.dims,
        emb.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
