pub mod decompose;
pub mod embed;
pub mod score;
pub mod synth;
pub mod train;

use std::path::Path;

use hiformer_core::data::{load_csv, RawDataset, Schema};
use hiformer_core::graph::{
    biased_walks, build_default_adjacency, read_coords_csv, train_embeddings, Node2vecConfig, TurbineGraph,
};
use hiformer_core::tensor::Tensor;

use crate::error::CliError;

pub fn load_dataset(path: &Path, schema: Schema) -> Result<RawDataset, CliError> {
    Ok(load_csv(path, schema)?)
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Turbine graph in the dataset's turbine order: kernel weights from
/// coordinates when given, equal weights otherwise.
pub fn turbine_graph(turbines: &[String], coords: Option<&Path>, epsilon: f64) -> Result<TurbineGraph, CliError> {
    let Some(path) = coords else {
        return Ok(TurbineGraph::uniform(turbines.len())?);
    };
    let sites = read_coords_csv(path)?;
    let positions = turbines
        .iter()
        .map(|id| {
            sites
                .iter()
                .find(|(sid, _)| sid == id)
                .map(|(_, xy)| *xy)
                .ok_or_else(|| CliError::Data(format!("{}: no coordinates for turbine {id}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_default_adjacency(&positions, epsilon)?)
}

/// `dims×N` node2vec vectors. A single turbine has no graph to walk and
/// gets a zero vector.
pub fn node_embedding(
    turbines: &[String],
    coords: Option<&Path>,
    epsilon: f64,
    cfg: &Node2vecConfig,
) -> Result<Tensor<f64>, CliError> {
    if turbines.len() == 1 {
        cfg.validate()?;
        return Ok(Tensor::zeros(&[cfg.dims, 1]));
    }
    let graph = turbine_graph(turbines, coords, epsilon)?;
    let walks = biased_walks(&graph, cfg)?;
    Ok(train_embeddings(&walks, graph.n(), cfg)?.vectors)
}
