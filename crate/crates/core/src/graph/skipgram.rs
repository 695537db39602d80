//! Skip-gram with negative sampling over node walks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GraphError, Node2vecConfig};
use crate::tensor::Tensor;

/// Trained node vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbedding {
    /// `dims×N`, one column per node.
    pub vectors: Tensor<f64>,
    /// Mean loss per (center, context) pair for each epoch.
    pub epoch_losses: Vec<f64>,
}

impl NodeEmbedding {
    pub fn node(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.node(i), self.node(j));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-300)
    }
}

const TABLE_SIZE: usize = 1 << 16;
const MIN_LR_FRACTION: f64 = 1e-4;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Noise distribution ∝ count^0.75 laid out as a lookup table.
fn noise_table(walks: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut counts = vec![0.0f64; n];
    for &v in walks.iter().flatten() {
        counts[v] += 1.0;
    }
    let powered: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
    let total: f64 = powered.iter().sum();
    let mut table = Vec::with_capacity(TABLE_SIZE);
    let mut acc = 0.0;
    for (v, w) in powered.iter().enumerate() {
        acc += w / total;
        while (table.len() as f64) < acc * TABLE_SIZE as f64 && table.len() < TABLE_SIZE {
            table.push(v);
        }
    }
    while table.len() < TABLE_SIZE {
        table.push(n - 1);
    }
    table
}

/// Trains `dims`-wide vectors for nodes `0..n` on the given walks.
/// Single-threaded and deterministic for a fixed seed.
pub fn train_embeddings(walks: &[Vec<usize>], n: usize, cfg: &Node2vecConfig) -> Result<NodeEmbedding, GraphError> {
    cfg.validate()?;
    if walks.iter().all(|w| w.len() < 2) || n == 0 {
        return Err(GraphError::EmptyWalks);
    }
    if let Some(&bad) = walks.iter().flatten().find(|&&v| v >= n) {
        return Err(GraphError::InvalidParameter(format!("walk visits node {bad} but n = {n}")));
    }
    let d = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..n * d).map(|_| (rng.gen::<f64>() - 0.5) / d as f64).collect();
    let mut output = vec![0.0f64; n * d];
    let table = noise_table(walks, n);

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| (0..w.len()).map(|i| context(i, w.len(), cfg.window).count()).sum::<usize>())
        .sum();
    let total_pairs = (pairs_per_epoch * cfg.epochs) as f64;
    let mut seen = 0usize;
    let mut grad = vec![0.0f64; d];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut loss = 0.0;
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                for j in context(i, walk.len(), cfg.window) {
                    let lr = cfg.lr * (1.0 - seen as f64 / total_pairs).max(MIN_LR_FRACTION);
                    seen += 1;
                    grad.fill(0.0);
                    let v = &mut input[center * d..(center + 1) * d];
                    let positive = walk[j];
                    for s in 0..=cfg.negatives {
                        let (target, label) = if s == 0 {
                            (positive, 1.0)
                        } else {
                            let t = table[rng.gen_range(0..TABLE_SIZE)];
                            if t == positive {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = &mut output[target * d..(target + 1) * d];
                        let score: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                        let prob = sigmoid(score);
                        loss -= if label > 0.0 {
                            prob.max(1e-300).ln()
                        } else {
                            (1.0 - prob).max(1e-300).ln()
                        };
                        let g = (label - prob) * lr;
                        for k in 0..d {
                            grad[k] += g * u[k];
                            u[k] += g * v[k];
                        }
                    }
                    for k in 0..d {
                        v[k] += grad[k];
                    }
                }
            }
        }
        epoch_losses.push(loss / pairs_per_epoch.max(1) as f64);
    }

    let vectors = Tensor::from_fn(&[d, n], |idx| input[(idx % n) * d + idx / n]);
    Ok(NodeEmbedding { vectors, epoch_losses })
}

fn context(i: usize, len: usize, window: usize) -> impl Iterator<Item = usize> {
    let lo = i.saturating_sub(window);
    let hi = (i + window + 1).min(len);
    (lo..hi).filter(move |&j| j != i)
}

/// `turbine,e0,…` rows, one per node.
pub fn write_embeddings_csv<W: Write>(emb: &NodeEmbedding, ids: &[String], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dims = emb.vectors.rows();
    let mut header = vec!["turbine".to_string()];
    header.extend((0..dims).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(emb.node(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
