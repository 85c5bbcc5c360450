//! Two-round message-passing network over a kernel graph with a dense head.
//!
//! Each round computes `h' = relu(W [h ; mean_{j in pred(i)} h_j] + b)`.
//! The graph embedding is the mean over nodes, concatenated with the global
//! features and fed to one hidden ReLU layer and a linear output. All
//! neighbourhood and readout means sum rows in value order, so the result is
//! bitwise independent of node labelling.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::EncodedGraph;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wh: usize,
    bh: usize,
    wo: usize,
    bo: usize,
    len: usize,
}

impl Layout {
    fn new(f: usize, h: usize, g: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + h * 2 * f;
        let w2 = b1 + h;
        let b2 = w2 + h * 2 * h;
        let wh = b2 + h;
        let bh = wh + h * (h + g);
        let wo = bh + h;
        let bo = wo + h;
        Self {
            w1,
            b1,
            w2,
            b2,
            wh,
            bh,
            wo,
            bo,
            len: bo + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetFile", try_from = "NetFile")]
pub struct Net {
    pub node_dim: usize,
    pub hidden: usize,
    pub global_dim: usize,
    pub params: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    u1: Vec<f64>,
    z1: Vec<f64>,
    u2: Vec<f64>,
    z2: Vec<f64>,
    pub embedding: Vec<f64>,
    v: Vec<f64>,
    zh: Vec<f64>,
    a: Vec<f64>,
    pub y: f64,
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

fn affine(w: &[f64], b: &[f64], u: &[f64], out: &mut [f64]) {
    let cols = u.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = b[r];
        for (wi, ui) in row.iter().zip(u) {
            s += wi * ui;
        }
        *o = s;
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Mean of the given rows, summed in lexicographic value order.
fn sorted_mean(mut rows: Vec<&[f64]>, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if rows.is_empty() {
        return out;
    }
    rows.sort_by(|a, b| lex(a, b));
    for r in &rows {
        for (o, v) in out.iter_mut().zip(*r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

impl Net {
    /// He-uniform hidden weights, small output weights and the output bias
    /// set to `out_bias`.
    pub fn new(
        node_dim: usize,
        hidden: usize,
        global_dim: usize,
        out_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let l = Layout::new(node_dim, hidden, global_dim);
        let mut params = vec![0.0; l.len];
        let mut fill = |start: usize, len: usize, fan_in: usize| {
            let lim = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[start..start + len] {
                *p = rng.random_range(-lim..lim);
            }
        };
        fill(l.w1, hidden * 2 * node_dim, 2 * node_dim);
        fill(l.w2, hidden * 2 * hidden, 2 * hidden);
        fill(l.wh, hidden * (hidden + global_dim), hidden + global_dim);
        fill(l.wo, hidden, hidden * 100);
        params[l.bo] = out_bias;
        Self {
            node_dim,
            hidden,
            global_dim,
            params,
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.node_dim, self.hidden, self.global_dim)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, g: &EncodedGraph, globals: &[f64]) -> Result<()> {
        if g.n == 0 || g.x.len() != g.n * self.node_dim || g.in_nbrs.len() != g.n {
            return Err(Error::InvalidInput(
                "encoded graph does not match the network".into(),
            ));
        }
        if globals.len() != self.global_dim {
            return Err(Error::InvalidInput(format!(
                "expected {} global features, got {}",
                self.global_dim,
                globals.len()
            )));
        }
        Ok(())
    }

    fn round(
        &self,
        input: &[f64],
        dim: usize,
        in_nbrs: &[Vec<usize>],
        w: usize,
        b: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (h, n) = (self.hidden, in_nbrs.len());
        let mut u = vec![0.0; n * 2 * dim];
        let mut z = vec![0.0; n * h];
        let mut out = vec![0.0; n * h];
        let wm = &self.params[w..w + h * 2 * dim];
        let bv = &self.params[b..b + h];
        for i in 0..n {
            let ui = &mut u[i * 2 * dim..(i + 1) * 2 * dim];
            ui[..dim].copy_from_slice(&input[i * dim..(i + 1) * dim]);
            let nbr_rows = in_nbrs[i]
                .iter()
                .map(|&j| &input[j * dim..(j + 1) * dim])
                .collect();
            ui[dim..].copy_from_slice(&sorted_mean(nbr_rows, dim));
            affine(wm, bv, ui, &mut z[i * h..(i + 1) * h]);
        }
        for (o, zi) in out.iter_mut().zip(&z) {
            *o = relu(*zi);
        }
        (u, z, out)
    }

    pub fn forward(&self, g: &EncodedGraph, globals: &[f64]) -> Result<Cache> {
        self.check_input(g, globals)?;
        let (h, l) = (self.hidden, self.layout());
        let (u1, z1, h1) = self.round(&g.x, self.node_dim, &g.in_nbrs, l.w1, l.b1);
        let (u2, z2, h2) = self.round(&h1, h, &g.in_nbrs, l.w2, l.b2);
        let embedding = sorted_mean(h2.chunks(h).collect(), h);
        let mut v = embedding.clone();
        v.extend_from_slice(globals);
        let mut zh = vec![0.0; h];
        affine(
            &self.params[l.wh..l.bh],
            &self.params[l.bh..l.bh + h],
            &v,
            &mut zh,
        );
        let a: Vec<f64> = zh.iter().map(|&z| relu(z)).collect();
        let mut y = self.params[l.bo];
        for (w, ai) in self.params[l.wo..l.wo + h].iter().zip(&a) {
            y += w * ai;
        }
        if !y.is_finite() {
            return Err(Error::Diverged("network output is not finite".into()));
        }
        Ok(Cache {
            u1,
            z1,
            u2,
            z2,
            embedding,
            v,
            zh,
            a,
            y,
        })
    }

    pub fn predict(&self, g: &EncodedGraph, globals: &[f64]) -> Result<f64> {
        Ok(self.forward(g, globals)?.y)
    }

    /// Accumulates `dy * d(output)/d(params)` into `grad`.
    pub fn backward(&self, g: &EncodedGraph, c: &Cache, dy: f64, grad: &mut [f64]) {
        let (h, f, l, n) = (self.hidden, self.node_dim, self.layout(), g.n);
        let p = &self.params;
        grad[l.bo] += dy;
        let mut dzh = vec![0.0; h];
        for k in 0..h {
            grad[l.wo + k] += dy * c.a[k];
            if c.zh[k] > 0.0 {
                dzh[k] = dy * p[l.wo + k];
            }
        }
        let vc = h + self.global_dim;
        let mut dpool = vec![0.0; h];
        for (r, &d) in dzh.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[l.bh + r] += d;
            let row = l.wh + r * vc;
            for col in 0..vc {
                grad[row + col] += d * c.v[col];
            }
            for (col, dp) in dpool.iter_mut().enumerate() {
                *dp += p[row + col] * d;
            }
        }

        // Round two.
        let mut dh1 = vec![0.0; n * h];
        let mut dz = vec![0.0; h];
        for i in 0..n {
            for k in 0..h {
                dz[k] = if c.z2[i * h + k] > 0.0 {
                    dpool[k] / n as f64
                } else {
                    0.0
                };
            }
            let u = &c.u2[i * 2 * h..(i + 1) * 2 * h];
            let mut du = vec![0.0; 2 * h];
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[l.b2 + r] += d;
                let row = l.w2 + r * 2 * h;
                for col in 0..2 * h {
                    grad[row + col] += d * u[col];
                    du[col] += p[row + col] * d;
                }
            }
            for k in 0..h {
                dh1[i * h + k] += du[k];
            }
            let deg = g.in_nbrs[i].len();
            for &j in &g.in_nbrs[i] {
                for k in 0..h {
                    dh1[j * h + k] += du[h + k] / deg as f64;
                }
            }
        }

        // Round one; node inputs are data so only weights get gradients.
        for i in 0..n {
            let u = &c.u1[i * 2 * f..(i + 1) * 2 * f];
            for r in 0..h {
                if c.z1[i * h + r] <= 0.0 {
                    continue;
                }
                let d = dh1[i * h + r];
                grad[l.b1 + r] += d;
                let row = l.w1 + r * 2 * f;
                for col in 0..2 * f {
                    grad[row + col] += d * u[col];
                }
            }
        }
    }
}

/// On-disk form: each tensor as a nested array.
#[derive(Serialize, Deserialize)]
struct NetFile {
    node_dim: usize,
    hidden: usize,
    global_dim: usize,
    tensors: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Net {
    fn tensor_shapes(&self) -> Vec<(&'static str, usize, usize, usize)> {
        let (f, h, gd, l) = (self.node_dim, self.hidden, self.global_dim, self.layout());
        vec![
            ("gnn1_w", l.w1, h, 2 * f),
            ("gnn1_b", l.b1, 1, h),
            ("gnn2_w", l.w2, h, 2 * h),
            ("gnn2_b", l.b2, 1, h),
            ("head_w", l.wh, h, h + gd),
            ("head_b", l.bh, 1, h),
            ("out_w", l.wo, 1, h),
            ("out_b", l.bo, 1, 1),
        ]
    }
}

impl From<Net> for NetFile {
    fn from(net: Net) -> Self {
        let tensors = net
            .tensor_shapes()
            .into_iter()
            .map(|(name, start, rows, cols)| {
                let t = (0..rows)
                    .map(|r| net.params[start + r * cols..start + (r + 1) * cols].to_vec())
                    .collect();
                (name.to_string(), t)
            })
            .collect();
        NetFile {
            node_dim: net.node_dim,
            hidden: net.hidden,
            global_dim: net.global_dim,
            tensors,
        }
    }
}

impl TryFrom<NetFile> for Net {
    type Error = Error;

    fn try_from(file: NetFile) -> Result<Self> {
        if file.node_dim == 0 || file.hidden == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        let mut net = Net {
            node_dim: file.node_dim,
            hidden: file.hidden,
            global_dim: file.global_dim,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.layout().len];
        for (name, start, rows, cols) in net.tensor_shapes() {
            let t = file
                .tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing tensor {name}")))?;
            if t.len() != rows || t.iter().any(|r| r.len() != cols) {
                return Err(Error::Config(format!(
                    "tensor {name} should be {rows}x{cols}"
                )));
            }
            for (r, row) in t.iter().enumerate() {
                net.params[start + r * cols..start + (r + 1) * cols].copy_from_slice(row);
            }
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Net, EncodedGraph, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Net::new(3, 5, 2, 0.5, &mut rng);
        let x = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = EncodedGraph {
            n: 4,
            x,
            in_nbrs: vec![vec![], vec![0], vec![0, 1], vec![2]],
        };
        (net, g, vec![0.3, -1.1])
    }

    #[test]
    fn layout_covers_all_parameters() {
        let (net, _, _) = toy();
        assert_eq!(net.num_params(), 5 * 6 + 5 + 5 * 10 + 5 + 5 * 7 + 5 + 5 + 1);
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let (net, _, _) = toy();
        let s = serde_json::to_string(&net).unwrap();
        let back: Net = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn backward_matches_finite_differences() {
        let (mut net, g, gl) = toy();
        let c = net.forward(&g, &gl).unwrap();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&g, &c, 1.0, &mut grad);
        for k in 0..net.num_params() {
            let orig = net.params[k];
            net.params[k] = orig + 1e-6;
            let up = net.predict(&g, &gl).unwrap();
            net.params[k] = orig - 1e-6;
            let dn = net.predict(&g, &gl).unwrap();
            net.params[k] = orig;
            let fd = (up - dn) / 2e-6;
            assert!(
                (fd - grad[k]).abs() < 1e-6,
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn wrong_global_width_is_rejected() {
        let (net, g, _) = toy();
        assert!(net.forward(&g, &[1.0]).is_err());
    }
}
