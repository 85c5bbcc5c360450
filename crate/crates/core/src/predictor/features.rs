//! Turning kernel graphs and global features into normalized network inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{GlobalFeatures, KernelKind, KernelNode, LayerGraph};

pub const NUM_KINDS: usize = KernelKind::ALL.len();
pub const NUM_NUMERIC: usize = 8;
/// One-hot kernel kind followed by the standardized numeric features.
pub const NODE_DIM: usize = NUM_KINDS + NUM_NUMERIC;

/// `log1p` of the node's counts. Time is taken in microseconds so the
/// transform is not flat.
pub fn node_numeric(n: &KernelNode) -> [f64; NUM_NUMERIC] {
    [
        n.flops as f64,
        n.arithmetic_intensity,
        n.weight_bytes_loaded as f64,
        n.act_bytes_loaded as f64,
        n.act_bytes_stored as f64,
        n.kv_bytes_loaded as f64,
        n.kv_bytes_stored as f64,
        n.est_time * 1e6,
    ]
    .map(f64::ln_1p)
}

pub fn global_numeric(g: &GlobalFeatures) -> Vec<f64> {
    g.to_vec().into_iter().map(f64::ln_1p).collect()
}

/// Per-column z-score with statistics taken from training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot standardize an empty set".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::InvalidInput("ragged feature rows".into()));
            }
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // Constant columns pass through centred but unscaled.
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// A graph ready for the network: dense node features and predecessor lists.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGraph {
    pub n: usize,
    /// Row-major `n x NODE_DIM`.
    pub x: Vec<f64>,
    pub in_nbrs: Vec<Vec<usize>>,
}

impl EncodedGraph {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * NODE_DIM..(i + 1) * NODE_DIM]
    }
}

pub fn encode_graph(g: &LayerGraph, norm: &Standardizer) -> Result<EncodedGraph> {
    if g.nodes.is_empty() {
        return Err(Error::InvalidInput("cannot encode an empty graph".into()));
    }
    if norm.dim() != NUM_NUMERIC {
        return Err(Error::InvalidInput(
            "node standardizer has the wrong width".into(),
        ));
    }
    let n = g.nodes.len();
    if g.edges.iter().any(|&(s, d)| s >= n || d >= n) {
        return Err(Error::InvalidInput("edge endpoint out of range".into()));
    }
    let mut x = Vec::with_capacity(n * NODE_DIM);
    for node in &g.nodes {
        let mut onehot = [0.0; NUM_KINDS];
        onehot[node.kind.index()] = 1.0;
        x.extend_from_slice(&onehot);
        x.extend(norm.apply(&node_numeric(node)));
    }
    Ok(EncodedGraph {
        n,
        x,
        in_nbrs: g.in_neighbors(),
    })
}

/// One training/evaluation example for a single head.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub graph: EncodedGraph,
    pub globals: Vec<f64>,
    /// ln(energy in J)
    pub target: f64,
}
