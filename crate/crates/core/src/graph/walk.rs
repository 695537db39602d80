//! Second-order biased random walks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GraphError, TurbineGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Node2vecConfig {
    pub dims: usize,
    pub walk_len: usize,
    pub walks_per_node: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for Node2vecConfig {
    fn default() -> Self {
        Self {
            dims: 64,
            walk_len: 20,
            walks_per_node: 10,
            p: 1.0,
            q: 1.0,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

impl Node2vecConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::InvalidParameter(m));
        if !(self.p > 0.0 && self.q > 0.0) {
            return bad(format!("p and q must be positive, got p={} q={}", self.p, self.q));
        }
        if self.dims < 2 {
            return bad(format!("dims must be at least 2, got {}", self.dims));
        }
        if self.window == 0 || self.walk_len < self.window + 1 {
            return bad(format!(
                "need window ≥ 1 and walk_len ≥ window + 1, got walk_len={} window={}",
                self.walk_len, self.window
            ));
        }
        if self.walks_per_node == 0 || self.epochs == 0 {
            return bad("walks_per_node and epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        Ok(())
    }
}

/// Next-step distribution from `cur` given the previous node.
/// Unnormalized weight is `w(cur,x)` scaled by `1/p` for a return to
/// `prev`, by 1 when `x` neighbors `prev`, and by `1/q` otherwise.
pub fn transition_probs(g: &TurbineGraph, prev: Option<usize>, cur: usize, p: f64, q: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = g
        .neighbors(cur)
        .map(|(x, w)| {
            let bias = match prev {
                None => 1.0,
                Some(t) if t == x => 1.0 / p,
                Some(t) if g.weight(t, x) > 0.0 => 1.0,
                Some(_) => 1.0 / q,
            };
            (x, w * bias)
        })
        .collect();
    let total: f64 = out.iter().map(|&(_, w)| w).sum();
    if total > 0.0 {
        for (_, w) in &mut out {
            *w /= total;
        }
    }
    out
}

fn sample(probs: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for &(x, w) in probs {
        acc += w;
        if r < acc {
            return x;
        }
    }
    probs.last().expect("non-empty distribution").0
}

fn walk_from(g: &TurbineGraph, start: usize, cfg: &Node2vecConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(cfg.walk_len);
    walk.push(start);
    while walk.len() < cfg.walk_len {
        let cur = *walk.last().expect("non-empty");
        let prev = walk.len().checked_sub(2).map(|i| walk[i]);
        let probs = transition_probs(g, prev, cur, cfg.p, cfg.q);
        if probs.is_empty() {
            break;
        }
        walk.push(sample(&probs, rng));
    }
    walk
}

/// `walks_per_node · N` walks, ordered round by round then by start node.
/// Walk `k` draws from its own stream of the seeded generator, so the result
/// does not depend on scheduling.
pub fn biased_walks(g: &TurbineGraph, cfg: &Node2vecConfig) -> Result<Vec<Vec<usize>>, GraphError> {
    cfg.validate()?;
    if g.edge_count() == 0 {
        return Err(GraphError::NoEdges);
    }
    let n = g.n();
    Ok((0..cfg.walks_per_node * n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            walk_from(g, k % n, cfg, &mut rng)
        })
        .collect())
}
