//! Turbine graph construction and node2vec spatial embeddings.

mod skipgram;
mod walk;

use std::path::Path;

use thiserror::Error;

pub use skipgram::{train_embeddings, write_embeddings_csv, NodeEmbedding};
pub use walk::{biased_walks, transition_probs, Node2vecConfig};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("invalid graph parameter: {0}")]
    InvalidParameter(String),
    #[error("adjacency is not a valid weight matrix: {0}")]
    InvalidAdjacency(String),
    #[error("graph has no edges")]
    NoEdges,
    #[error("no walks to train on")]
    EmptyWalks,
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default sparsity threshold on kernel weights.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Weighted undirected graph over `n` turbines.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineGraph {
    n: usize,
    coords: Option<Vec<[f64; 2]>>,
    /// Row-major `n×n`, symmetric, entries in `[0, 1]`.
    adjacency: Vec<f64>,
}

impl TurbineGraph {
    /// Validates and wraps an explicit `n×n` weight matrix.
    pub fn from_adjacency(n: usize, adjacency: Vec<f64>) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        if adjacency.len() != n * n {
            return Err(GraphError::InvalidAdjacency(format!(
                "expected {} entries, got {}",
                n * n,
                adjacency.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let a = adjacency[i * n + j];
                if !(0.0..=1.0).contains(&a) {
                    return Err(GraphError::InvalidAdjacency(format!(
                        "entry ({i},{j}) = {a} outside [0,1]"
                    )));
                }
                if (a - adjacency[j * n + i]).abs() > 1e-12 {
                    return Err(GraphError::InvalidAdjacency(format!(
                        "entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            coords: None,
            adjacency,
        })
    }

    /// Equal weight `1/(n−1)` between every pair, for sites without positions.
    pub fn uniform(n: usize) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        let w = 1.0 / (n - 1) as f64;
        let adjacency = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { w })
            .collect();
        Self::from_adjacency(n, adjacency)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    /// Nodes with positive weight from `i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let row = &self.adjacency[i * self.n..(i + 1) * self.n];
        row.iter()
            .enumerate()
            .filter(move |&(j, &w)| j != i && w > 0.0)
            .map(|(j, &w)| (j, w))
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n)
            .map(|i| self.neighbors(i).filter(|&(j, _)| j > i).count())
            .sum()
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Median of all pairwise distances, the default kernel length scale.
pub fn median_distance(coords: &[[f64; 2]]) -> Option<f64> {
    let mut d: Vec<f64> = (0..coords.len())
        .flat_map(|i| (i + 1..coords.len()).map(move |j| (i, j)))
        .map(|(i, j)| distance(coords[i], coords[j]))
        .collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    Some(if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] })
}

/// Gaussian-kernel graph: `exp(−d²/(2σ²))` where that exceeds `epsilon`,
/// zero otherwise, with an empty diagonal.
pub fn build_adjacency(coords: &[[f64; 2]], sigma: f64, epsilon: f64) -> Result<TurbineGraph, GraphError> {
    let n = coords.len();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(GraphError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(GraphError::InvalidParameter(format!(
            "epsilon must lie in [0,1), got {epsilon}"
        )));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GraphError::InvalidParameter("non-finite coordinate".into()));
    }
    let mut adjacency = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(coords[i], coords[j]);
            let k = (-d * d / (2.0 * sigma * sigma)).exp();
            let w = if k > epsilon { k } else { 0.0 };
            adjacency[i * n + j] = w;
            adjacency[j * n + i] = w;
        }
    }
    Ok(TurbineGraph {
        n,
        coords: Some(coords.to_vec()),
        adjacency,
    })
}

/// Kernel graph with `σ` set to the median pairwise distance. Falls back to
/// the uniform graph when all sites coincide.
pub fn build_default_adjacency(coords: &[[f64; 2]], epsilon: f64) -> Result<TurbineGraph, GraphError> {
    match median_distance(coords) {
        Some(sigma) if sigma > 0.0 => build_adjacency(coords, sigma, epsilon),
        Some(_) => build_adjacency(coords, 1.0, epsilon),
        None => Err(GraphError::TooFewNodes(coords.len())),
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Reads `turbine_id,x,y` rows. Rows are ordered by ascending turbine id.
pub fn read_coords_csv(path: &Path) -> Result<Vec<(String, [f64; 2])>, GraphError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| parse_err(path, format!("missing column '{name}'")))
    };
    let (id, x, y) = (col("turbine_id")?, col("x")?, col("y")?);
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| parse_err(path, format!("row {}: bad number in column {k}", line + 2)))
        };
        out.push((rec.get(id).unwrap_or_default().to_string(), [num(x)?, num(y)?]));
    }
    sort_by_id(&mut out);
    Ok(out)
}

/// Numeric ids sort numerically, others lexically.
pub(crate) fn sort_by_id<V>(rows: &mut [(String, V)]) {
    rows.sort_by(|a, b| match (a.0.parse::<i64>(), b.0.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.0.cmp(&b.0),
    });
}

/// Reads a square weight matrix, one row per line, with no header.
pub fn read_adjacency_csv(path: &Path) -> Result<TurbineGraph, GraphError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec?;
        for field in rec.iter() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, format!("row {}: bad number '{field}'", rows + 1)))?,
            );
        }
        rows += 1;
    }
    TurbineGraph::from_adjacency(rows, values)
}
