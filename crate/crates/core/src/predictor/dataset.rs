//! Synthetic labelled datasets from a roofline energy oracle.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{LlmEnergyEstimator, LlmEstimate};
use crate::error::{ensure, Error, Result};
use crate::workload::{
    build_layer_graph, classify_intensity, global_features, roofline_time, Boundedness, DeviceSpec,
    GlobalFeatures, LayerGraph, LlmConfig, Phase, Request,
};

/// Share of the idle-to-active power swing drawn while a kernel is memory-bound.
pub const MEMORY_BOUND_POWER_SHARE: f64 = 0.6;

/// Noise-free energy model: roofline time per kernel times a boundedness
/// dependent power level, summed over layers and decode steps.
#[derive(Clone, Copy, Debug, Default)]
pub struct RooflineOracle;

impl RooflineOracle {
    pub fn kernel_power(ai: f64, dev: &DeviceSpec) -> f64 {
        match classify_intensity(ai, dev) {
            Boundedness::MemoryBound => {
                dev.idle_power + MEMORY_BOUND_POWER_SHARE * (dev.active_power - dev.idle_power)
            }
            Boundedness::ComputeBound => dev.active_power,
        }
    }

    /// Energy and time of one layer graph.
    pub fn graph_cost(g: &LayerGraph, dev: &DeviceSpec) -> (f64, f64) {
        g.nodes.iter().fold((0.0, 0.0), |(e, t), n| {
            let dt = roofline_time(n, dev);
            (
                e + dt * Self::kernel_power(n.arithmetic_intensity, dev),
                t + dt,
            )
        })
    }

    pub fn prefill(cfg: &LlmConfig, req: &Request, dev: &DeviceSpec) -> Result<(f64, f64)> {
        let g = build_layer_graph(cfg, req, Phase::Prefill, req.prompt_len)?;
        let (e, t) = Self::graph_cost(&g, dev);
        let layers = cfg.num_layers as f64;
        Ok((e * layers, t * layers))
    }

    /// Sum over every generated token.
    pub fn decode(cfg: &LlmConfig, req: &Request, dev: &DeviceSpec) -> Result<(f64, f64)> {
        let mut acc = (0.0, 0.0);
        for pos in req.decode_positions() {
            let g = build_layer_graph(cfg, req, Phase::Decode, pos)?;
            let (e, t) = Self::graph_cost(&g, dev);
            acc = (acc.0 + e, acc.1 + t);
        }
        let layers = cfg.num_layers as f64;
        Ok((acc.0 * layers, acc.1 * layers))
    }
}

impl LlmEnergyEstimator for RooflineOracle {
    fn estimate(&self, cfg: &LlmConfig, req: &Request, dev: &DeviceSpec) -> Result<LlmEstimate> {
        dev.validate()?;
        let (pe, pt) = Self::prefill(cfg, req, dev)?;
        let (de, dt) = Self::decode(cfg, req, dev)?;
        Ok(LlmEstimate {
            prefill_j: pe,
            total_j: pe + de,
            latency_s: pt + dt,
        })
    }
}

/// Roofline latency of a whole request.
pub fn request_latency(cfg: &LlmConfig, req: &Request, dev: &DeviceSpec) -> Result<f64> {
    Ok(RooflineOracle::prefill(cfg, req, dev)?.1 + RooflineOracle::decode(cfg, req, dev)?.1)
}

/// One labelled request: both phase graphs, both global views and the
/// measured (or simulated) prefill and total energy in joules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub device: String,
    pub llm: String,
    pub request: Request,
    pub prefill_graph: LayerGraph,
    pub decode_graph: LayerGraph,
    pub prefill_globals: GlobalFeatures,
    /// Decode-phase view without the prefill energy filled in.
    pub total_globals: GlobalFeatures,
    pub label_prefill: f64,
    pub label_total: f64,
}

impl GraphSample {
    /// Builds the graphs and features for `req` with `cfg` at the device's
    /// native precision.
    pub fn build(
        cfg: &LlmConfig,
        req: &Request,
        dev: &DeviceSpec,
        label_prefill: f64,
        label_total: f64,
    ) -> Result<Self> {
        let cfg = cfg.for_device(dev);
        let prefill_graph =
            build_layer_graph(&cfg, req, Phase::Prefill, req.prompt_len)?.with_roofline(dev);
        let decode_graph =
            build_layer_graph(&cfg, req, Phase::Decode, req.decode_position())?.with_roofline(dev);
        let s = Self {
            device: dev.name.clone(),
            llm: cfg.name.clone(),
            request: *req,
            prefill_graph,
            decode_graph,
            prefill_globals: global_features(&cfg, req, Phase::Prefill, None)?,
            total_globals: global_features(&cfg, req, Phase::Decode, None)?,
            label_prefill,
            label_total,
        };
        s.validate()?;
        Ok(s)
    }

    /// Phase-agnostic view of the request: every node carries the prompt-pass
    /// counts plus `output_len` times the representative decode step.
    pub fn whole_request_graph(&self) -> LayerGraph {
        let k = self.request.output_len;
        let nodes = self
            .prefill_graph
            .nodes
            .iter()
            .zip(&self.decode_graph.nodes)
            .map(|(p, d)| {
                let mut n = p.clone();
                n.flops += k * d.flops;
                n.weight_bytes_loaded += k * d.weight_bytes_loaded;
                n.act_bytes_loaded += k * d.act_bytes_loaded;
                n.act_bytes_stored += k * d.act_bytes_stored;
                n.kv_bytes_loaded += k * d.kv_bytes_loaded;
                n.kv_bytes_stored += k * d.kv_bytes_stored;
                n.est_time += k as f64 * d.est_time;
                let bytes = n.total_bytes();
                n.arithmetic_intensity = if bytes > 0 {
                    n.flops as f64 / bytes as f64
                } else {
                    0.0
                };
                n
            })
            .collect();
        LayerGraph {
            phase: Phase::Prefill,
            nodes,
            edges: self.prefill_graph.edges.clone(),
        }
    }

    /// Request-level features with prompt and decode work lumped together.
    pub fn whole_request_globals(&self) -> GlobalFeatures {
        GlobalFeatures {
            total_ops: self.prefill_globals.total_ops + self.total_globals.total_ops,
            ..self.total_globals.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.request.validate()?;
        self.prefill_graph.validate()?;
        self.decode_graph.validate()?;
        ensure(self.prefill_graph.phase == Phase::Prefill, || {
            "prefill_graph has the wrong phase".into()
        })?;
        ensure(self.decode_graph.phase == Phase::Decode, || {
            "decode_graph has the wrong phase".into()
        })?;
        ensure(self.prefill_globals.phase == Phase::Prefill, || {
            "prefill_globals has the wrong phase".into()
        })?;
        ensure(self.total_globals.phase == Phase::Decode, || {
            "total_globals has the wrong phase".into()
        })?;
        ensure(
            self.label_prefill.is_finite() && self.label_prefill > 0.0,
            || format!("label_prefill must be positive, got {}", self.label_prefill),
        )?;
        ensure(
            self.label_total.is_finite() && self.label_total >= self.label_prefill,
            || format!("label_total {} must be >= label_prefill", self.label_total),
        )
    }
}

/// How request lengths are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestSampler {
    /// Log-normal prompt and output lengths resembling chat traces.
    Trace,
    /// Half long-prompt/short-output, half short-prompt/long-output.
    RegimeMixed,
}

impl RequestSampler {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(Self::Trace),
            "regime_mixed" | "regime-mixed" | "mixed" => Ok(Self::RegimeMixed),
            _ => Err(Error::InvalidInput(format!("unknown sampler {s:?}"))),
        }
    }

    pub fn sample(self, index: usize, rng: &mut impl Rng) -> Request {
        let (p, o) = match self {
            Self::Trace => {
                let lp = LogNormal::new(256f64.ln(), 0.9).unwrap();
                let lo = LogNormal::new(96f64.ln(), 0.9).unwrap();
                (
                    lp.sample(rng).round().clamp(16.0, 2048.0) as u64,
                    lo.sample(rng).round().clamp(4.0, 1024.0) as u64,
                )
            }
            Self::RegimeMixed if index.is_multiple_of(2) => {
                (rng.random_range(1024..=2048), rng.random_range(1..=4))
            }
            Self::RegimeMixed => (rng.random_range(16..=64), rng.random_range(256..=1024)),
        };
        Request {
            prompt_len: p,
            output_len: o,
        }
    }
}

/// Generates `n` samples over the model grid and devices. Labels are the
/// oracle energies with independent log-normal noise on the prefill and
/// decode parts.
pub fn gen_oracle_dataset(
    grid: &[LlmConfig],
    devices: &[DeviceSpec],
    sampler: RequestSampler,
    noise_sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<GraphSample>> {
    ensure(!grid.is_empty(), || "model grid is empty".into())?;
    ensure(!devices.is_empty(), || "device list is empty".into())?;
    ensure(noise_sigma.is_finite() && noise_sigma >= 0.0, || {
        format!("noise sigma must be >= 0, got {noise_sigma}")
    })?;
    for c in grid {
        c.validate()?;
    }
    for d in devices {
        d.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let draws: Vec<_> = (0..n)
        .map(|i| {
            let c = rng.random_range(0..grid.len());
            let d = rng.random_range(0..devices.len());
            let req = sampler.sample(i, &mut rng);
            (c, d, req, noise.sample(&mut rng), noise.sample(&mut rng))
        })
        .collect();
    draws
        .into_par_iter()
        .map(|(c, d, req, n1, n2)| {
            let dev = &devices[d];
            let cfg = grid[c].for_device(dev);
            let (pe, _) = RooflineOracle::prefill(&cfg, &req, dev)?;
            let (de, _) = RooflineOracle::decode(&cfg, &req, dev)?;
            let lp = pe * n1.exp();
            GraphSample::build(&cfg, &req, dev, lp, lp + de * n2.exp())
        })
        .collect()
}

pub fn write_jsonl(samples: &[GraphSample], mut w: impl Write) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads one sample per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl(r: impl BufRead) -> Result<Vec<GraphSample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let s: GraphSample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        s.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

/// Disjoint train/validation/test index sets from a seeded shuffle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Result<Split> {
    ensure(
        train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0,
        || format!("bad split fractions {train_frac}/{val_frac}"),
    )?;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let nt = ((n as f64) * train_frac).round() as usize;
    let nv = (((n as f64) * val_frac).round() as usize).min(n - nt);
    let test = idx.split_off(nt + nv);
    let val = idx.split_off(nt);
    Ok(Split {
        train: idx,
        val,
        test,
    })
}

pub fn select(samples: &[GraphSample], idx: &[usize]) -> Vec<GraphSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::{device, llm};
    use crate::workload::graph_time;

    #[test]
    fn prefill_energy_is_layer_sum() {
        let dev = device("rk3588").unwrap();
        let cfg = llm("q1.5").unwrap().for_device(&dev);
        let req = Request::new(100, 3).unwrap();
        let g = build_layer_graph(&cfg, &req, Phase::Prefill, 100).unwrap();
        let mut e = 0.0;
        for n in &g.nodes {
            e +=
                roofline_time(n, &dev) * RooflineOracle::kernel_power(n.arithmetic_intensity, &dev);
        }
        let (pe, pt) = RooflineOracle::prefill(&cfg, &req, &dev).unwrap();
        assert!((pe - e * 24.0).abs() <= 1e-12 * pe);
        assert!((pt - graph_time(&g, &dev) * 24.0).abs() <= 1e-12 * pt);
    }

    #[test]
    fn noiseless_labels_match_oracle() {
        let dev = device("agx_orin").unwrap();
        let cfg = llm("lam").unwrap();
        let ds = gen_oracle_dataset(
            std::slice::from_ref(&cfg),
            std::slice::from_ref(&dev),
            RequestSampler::Trace,
            0.0,
            5,
            1,
        )
        .unwrap();
        for s in &ds {
            let est = RooflineOracle
                .estimate(&cfg.for_device(&dev), &s.request, &dev)
                .unwrap();
            assert_eq!(s.label_prefill, est.prefill_j);
            assert!((s.label_total - est.total_j).abs() <= 1e-12 * est.total_j);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let devs = [device("rk3588").unwrap(), device("orin_nx").unwrap()];
        let grid = [llm("q1.5").unwrap(), llm("lam").unwrap()];
        let a = gen_oracle_dataset(&grid, &devs, RequestSampler::RegimeMixed, 0.05, 20, 9).unwrap();
        let b = gen_oracle_dataset(&grid, &devs, RequestSampler::RegimeMixed, 0.05, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regime_mixed_alternates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = RequestSampler::RegimeMixed.sample(0, &mut rng);
        let b = RequestSampler::RegimeMixed.sample(1, &mut rng);
        assert!(a.prompt_len >= 1024 && a.output_len <= 4);
        assert!(b.prompt_len <= 64 && b.output_len >= 256);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let s = split_indices(101, 0.8, 0.1, 4).unwrap();
        let mut all: Vec<_> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        assert_eq!(s.train.len(), 81);
    }

    #[test]
    fn jsonl_round_trip() {
        let devs = [device("rk3568").unwrap()];
        let grid = [llm("int").unwrap()];
        let ds = gen_oracle_dataset(&grid, &devs, RequestSampler::Trace, 0.1, 4, 2).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = read_jsonl("\n{\"device\": 3}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
