//! Per-layer kernel graphs for transformer inference and roofline analysis.
//!
//! A layer is twelve unfused kernels:
//!
//! ```text
//! norm -> qkv_proj -> attn_score -> softmax -> attn_value -> out_proj -> residual
//!            \______________________________^                             |
//!   residual -> norm -> ffn_up -> ffn_act -> ffn_down -> residual <-------+
//! ```
//!
//! Matmul FLOPs are `2*M*N*K`; softmax, norm and residual cost 5, 7 and 2
//! flops per element and the FFN activation 8. Every kernel reads its inputs
//! and writes its outputs exactly once. Prefill processes the whole prompt in
//! one pass; a decode step processes one token against a KV cache holding
//! `position` tokens (including itself).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const SOFTMAX_FLOPS_PER_ELEM: u64 = 5;
pub const NORM_FLOPS_PER_ELEM: u64 = 7;
pub const RESIDUAL_FLOPS_PER_ELEM: u64 = 2;
pub const ACT_FLOPS_PER_ELEM: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    #[serde(default)]
    pub name: String,
    pub num_layers: u64,
    pub hidden_dim: u64,
    pub num_heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
    /// Bytes per weight element (1 = INT8, 2 = FP16, 4 = FP32).
    pub weight_bytes: u64,
    /// Bytes per activation / KV element.
    pub act_bytes: u64,
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.num_layers > 0
                && self.hidden_dim > 0
                && self.num_heads > 0
                && self.head_dim > 0
                && self.ffn_dim > 0
                && self.vocab_size > 0
                && self.act_bytes > 0,
            || format!("all LLM dimensions must be positive ({})", self.name),
        )?;
        ensure(self.num_heads * self.head_dim == self.hidden_dim, || {
            format!(
                "num_heads * head_dim = {} does not match hidden_dim = {}",
                self.num_heads * self.head_dim,
                self.hidden_dim
            )
        })?;
        ensure(matches!(self.weight_bytes, 1 | 2 | 4), || {
            format!("weight_bytes must be 1, 2 or 4, got {}", self.weight_bytes)
        })
    }

    pub fn with_weight_bytes(&self, weight_bytes: u64) -> Self {
        Self {
            weight_bytes,
            ..self.clone()
        }
    }

    /// The config at the device's default weight precision.
    pub fn for_device(&self, dev: &DeviceSpec) -> Self {
        self.with_weight_bytes(dev.accelerator.default_weight_bytes())
    }

    /// Weights of one transformer layer, in elements.
    pub fn layer_params(&self) -> u64 {
        let d = self.hidden_dim;
        let f = self.ffn_dim;
        4 * d * d + 2 * d * f + 2 * d
    }

    /// All weights: layers, token embedding, LM head and final norm.
    pub fn param_count(&self) -> u64 {
        self.num_layers * self.layer_params()
            + 2 * self.vocab_size * self.hidden_dim
            + self.hidden_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub prompt_len: u64,
    pub output_len: u64,
}

impl Request {
    pub fn new(prompt_len: u64, output_len: u64) -> Result<Self> {
        let r = Self {
            prompt_len,
            output_len,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.prompt_len >= 1 && self.output_len >= 1, || {
            format!(
                "requests need at least one prompt and one output token (got {} / {})",
                self.prompt_len, self.output_len
            )
        })
    }

    pub fn seq_len(&self) -> u64 {
        self.prompt_len + self.output_len
    }

    /// KV length of the mid-sequence decode step used to represent the whole
    /// decode phase.
    pub fn decode_position(&self) -> u64 {
        self.prompt_len + self.output_len.div_ceil(2)
    }

    /// KV lengths of every decode step, in order.
    pub fn decode_positions(&self) -> impl Iterator<Item = u64> {
        (self.prompt_len + 1)..=(self.prompt_len + self.output_len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accelerator {
    #[default]
    Npu,
    Gpu,
}

impl Accelerator {
    /// INT8 weights on NPUs, FP16 on GPUs.
    pub fn default_weight_bytes(self) -> u64 {
        match self {
            Accelerator::Npu => 1,
            Accelerator::Gpu => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    /// ops/s of the inference accelerator
    pub peak_ops: f64,
    /// bytes/s
    pub mem_bandwidth: f64,
    /// W
    pub idle_power: f64,
    /// W
    pub active_power: f64,
    /// bytes
    pub dram_capacity: f64,
    #[serde(default)]
    pub accelerator: Accelerator,
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.peak_ops > 0.0 && self.peak_ops.is_finite(), || {
            format!("{}: peak_ops must be positive", self.name)
        })?;
        ensure(
            self.mem_bandwidth > 0.0 && self.mem_bandwidth.is_finite(),
            || format!("{}: mem_bandwidth must be positive", self.name),
        )?;
        ensure(
            self.idle_power >= 0.0 && self.active_power >= self.idle_power,
            || format!("{}: need active_power >= idle_power >= 0", self.name),
        )?;
        ensure(self.dram_capacity >= 0.0, || {
            format!("{}: dram_capacity must be >= 0", self.name)
        })
    }

    /// Arithmetic intensity (flops/byte) where compute and memory time meet.
    pub fn ridge_point(&self) -> f64 {
        self.peak_ops / self.mem_bandwidth
    }

    /// Same device with compute and bandwidth scaled.
    pub fn scaled(&self, name: &str, compute: f64, bandwidth: f64) -> Self {
        Self {
            name: name.to_string(),
            peak_ops: self.peak_ops * compute,
            mem_bandwidth: self.mem_bandwidth * bandwidth,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    QkvProj,
    AttnScore,
    Softmax,
    AttnValue,
    OutProj,
    FfnUp,
    FfnAct,
    FfnDown,
    Norm,
    Residual,
}

impl KernelKind {
    pub const ALL: [KernelKind; 10] = [
        KernelKind::QkvProj,
        KernelKind::AttnScore,
        KernelKind::Softmax,
        KernelKind::AttnValue,
        KernelKind::OutProj,
        KernelKind::FfnUp,
        KernelKind::FfnAct,
        KernelKind::FfnDown,
        KernelKind::Norm,
        KernelKind::Residual,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelNode {
    pub kind: KernelKind,
    pub flops: u64,
    pub arithmetic_intensity: f64,
    pub weight_bytes_loaded: u64,
    pub act_bytes_loaded: u64,
    pub act_bytes_stored: u64,
    pub kv_bytes_loaded: u64,
    pub kv_bytes_stored: u64,
    /// Roofline time on the graph's device; 0 until populated.
    pub est_time: f64,
}

impl KernelNode {
    fn new(
        kind: KernelKind,
        flops: u64,
        weight: u64,
        act_in: u64,
        act_out: u64,
        kv_in: u64,
        kv_out: u64,
    ) -> Self {
        let mut n = Self {
            kind,
            flops,
            arithmetic_intensity: 0.0,
            weight_bytes_loaded: weight,
            act_bytes_loaded: act_in,
            act_bytes_stored: act_out,
            kv_bytes_loaded: kv_in,
            kv_bytes_stored: kv_out,
            est_time: 0.0,
        };
        let bytes = n.total_bytes();
        n.arithmetic_intensity = if bytes > 0 {
            flops as f64 / bytes as f64
        } else {
            0.0
        };
        n
    }

    pub fn total_bytes(&self) -> u64 {
        self.weight_bytes_loaded
            + self.act_bytes_loaded
            + self.act_bytes_stored
            + self.kv_bytes_loaded
            + self.kv_bytes_stored
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub phase: Phase,
    pub nodes: Vec<KernelNode>,
    pub edges: Vec<(usize, usize)>,
}

impl LayerGraph {
    pub fn total_flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.nodes.iter().map(KernelNode::total_bytes).sum()
    }

    pub fn weight_bytes(&self) -> u64 {
        self.nodes.iter().map(|n| n.weight_bytes_loaded).sum()
    }

    /// Predecessor lists indexed by node.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut v = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            v[d].push(s);
        }
        v
    }

    /// Kahn topological order, or `None` when the edges contain a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut out = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            indeg[d] += 1;
            out[s].push(d);
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for &j in &out[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    fn weakly_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(s, d) in &self.edges {
            let (a, b) = (find(&mut parent, s), find(&mut parent, d));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..n).all(|i| find(&mut parent, i) == root)
    }

    /// Checks edge endpoints, acyclicity and weak connectivity.
    pub fn validate(&self) -> Result<()> {
        ensure(!self.nodes.is_empty(), || "graph has no nodes".into())?;
        let n = self.nodes.len();
        ensure(
            self.edges.iter().all(|&(s, d)| s < n && d < n && s != d),
            || "edge endpoint out of range or self loop".into(),
        )?;
        ensure(self.topological_order().is_some(), || {
            "graph contains a cycle".into()
        })?;
        ensure(self.weakly_connected(), || {
            "graph is not weakly connected".into()
        })
    }

    /// Fills every node's `est_time` with its roofline time on `dev`.
    pub fn with_roofline(mut self, dev: &DeviceSpec) -> Self {
        for node in &mut self.nodes {
            node.est_time = roofline_time(node, dev);
        }
        self
    }

    /// Same graph with nodes relabeled: node `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut nodes = self.nodes.clone();
        for (i, node) in self.nodes.iter().enumerate() {
            nodes[perm[i]] = node.clone();
        }
        Self {
            phase: self.phase,
            nodes,
            edges: self
                .edges
                .iter()
                .map(|&(s, d)| (perm[s], perm[d]))
                .collect(),
        }
    }
}

/// Builds the kernel graph of one transformer layer.
///
/// For prefill the whole prompt is processed at once and `position` is
/// ignored. For decode a single token is processed with a KV cache of
/// `position` tokens, which must lie in `1..=prompt_len + output_len`.
pub fn build_layer_graph(
    cfg: &LlmConfig,
    req: &Request,
    phase: Phase,
    position: u64,
) -> Result<LayerGraph> {
    cfg.validate()?;
    req.validate()?;
    let (tokens, kv_len) = match phase {
        Phase::Prefill => (req.prompt_len, req.prompt_len),
        Phase::Decode => {
            ensure(position >= 1 && position <= req.seq_len(), || {
                format!("decode position {position} outside 1..={}", req.seq_len())
            })?;
            (1, position)
        }
    };
    Ok(layer_graph(cfg, phase, tokens, kv_len))
}

fn layer_graph(cfg: &LlmConfig, phase: Phase, t: u64, s: u64) -> LayerGraph {
    use KernelKind::*;
    let d = cfg.hidden_dim;
    let h = cfg.num_heads;
    let f = cfg.ffn_dim;
    let w = cfg.weight_bytes;
    let a = cfg.act_bytes;

    let norm = || {
        KernelNode::new(
            Norm,
            NORM_FLOPS_PER_ELEM * t * d,
            d * w,
            t * d * a,
            t * d * a,
            0,
            0,
        )
    };
    let residual = || {
        KernelNode::new(
            Residual,
            RESIDUAL_FLOPS_PER_ELEM * t * d,
            0,
            2 * t * d * a,
            t * d * a,
            0,
            0,
        )
    };
    let nodes = vec![
        norm(),
        // Q goes to the score kernel; K and V are appended to the cache.
        KernelNode::new(
            QkvProj,
            2 * t * d * 3 * d,
            3 * d * d * w,
            t * d * a,
            t * d * a,
            0,
            2 * t * d * a,
        ),
        KernelNode::new(
            AttnScore,
            2 * t * s * d,
            0,
            t * d * a,
            h * t * s * a,
            s * d * a,
            0,
        ),
        KernelNode::new(
            Softmax,
            SOFTMAX_FLOPS_PER_ELEM * h * t * s,
            0,
            h * t * s * a,
            h * t * s * a,
            0,
            0,
        ),
        KernelNode::new(
            AttnValue,
            2 * t * s * d,
            0,
            h * t * s * a,
            t * d * a,
            s * d * a,
            0,
        ),
        KernelNode::new(
            OutProj,
            2 * t * d * d,
            d * d * w,
            t * d * a,
            t * d * a,
            0,
            0,
        ),
        residual(),
        norm(),
        KernelNode::new(FfnUp, 2 * t * d * f, d * f * w, t * d * a, t * f * a, 0, 0),
        KernelNode::new(
            FfnAct,
            ACT_FLOPS_PER_ELEM * t * f,
            0,
            t * f * a,
            t * f * a,
            0,
            0,
        ),
        KernelNode::new(
            FfnDown,
            2 * t * f * d,
            f * d * w,
            t * f * a,
            t * d * a,
            0,
            0,
        ),
        residual(),
    ];
    let edges = vec![
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 4),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 8),
        (8, 9),
        (9, 10),
        (10, 11),
        // V bypasses the score/softmax kernels.
        (1, 4),
        // Residual stream skips the FFN block.
        (6, 11),
    ];
    LayerGraph {
        phase,
        nodes,
        edges,
    }
}

/// Request-level aggregate features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalFeatures {
    pub total_ops: f64,
    pub layer_count: u64,
    pub hidden_dim: u64,
    pub ffn_dim: u64,
    pub prompt_len: u64,
    pub output_len: u64,
    pub weight_memory_bytes: f64,
    pub kv_cache_bytes: f64,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefill_energy: Option<f64>,
}

impl GlobalFeatures {
    /// Numeric view used by regressors; `prefill_energy` is appended when present.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.total_ops,
            self.layer_count as f64,
            self.hidden_dim as f64,
            self.ffn_dim as f64,
            self.prompt_len as f64,
            self.output_len as f64,
            self.weight_memory_bytes,
            self.kv_cache_bytes,
            match self.phase {
                Phase::Prefill => 0.0,
                Phase::Decode => 1.0,
            },
        ];
        if let Some(e) = self.prefill_energy {
            v.push(e);
        }
        v
    }

    pub fn with_prefill_energy(&self, energy: f64) -> Self {
        Self {
            prefill_energy: Some(energy),
            ..self.clone()
        }
    }
}

/// Aggregates per-layer counts over the model.
///
/// Prefill features describe the prompt pass. Decode features describe the
/// whole request (`total_ops` covers every decode step via the mid-sequence
/// representative step) and may carry the prefill energy for the total head.
pub fn global_features(
    cfg: &LlmConfig,
    req: &Request,
    phase: Phase,
    prefill_energy: Option<f64>,
) -> Result<GlobalFeatures> {
    cfg.validate()?;
    req.validate()?;
    if let Some(e) = prefill_energy {
        ensure(phase == Phase::Decode, || {
            "prefill_energy only belongs to total-phase features".into()
        })?;
        ensure(e.is_finite() && e >= 0.0, || {
            format!("prefill energy {e} is invalid")
        })?;
    }
    let (layer_flops, seq_len) = match phase {
        Phase::Prefill => (
            build_layer_graph(cfg, req, phase, req.prompt_len)?.total_flops() as f64,
            req.prompt_len,
        ),
        Phase::Decode => (
            build_layer_graph(cfg, req, phase, req.decode_position())?.total_flops() as f64
                * req.output_len as f64,
            req.seq_len(),
        ),
    };
    Ok(GlobalFeatures {
        total_ops: layer_flops * cfg.num_layers as f64,
        layer_count: cfg.num_layers,
        hidden_dim: cfg.hidden_dim,
        ffn_dim: cfg.ffn_dim,
        prompt_len: req.prompt_len,
        output_len: req.output_len,
        weight_memory_bytes: (cfg.param_count() * cfg.weight_bytes) as f64,
        kv_cache_bytes: (2 * cfg.num_layers * cfg.hidden_dim * seq_len * cfg.act_bytes) as f64,
        phase,
        prefill_energy,
    })
}

/// `max(flops / peak_ops, bytes / mem_bandwidth)`.
pub fn roofline_time(node: &KernelNode, dev: &DeviceSpec) -> f64 {
    let compute = node.flops as f64 / dev.peak_ops;
    let memory = node.total_bytes() as f64 / dev.mem_bandwidth;
    compute.max(memory)
}

pub fn graph_time(g: &LayerGraph, dev: &DeviceSpec) -> f64 {
    g.nodes.iter().map(|n| roofline_time(n, dev)).sum()
}

/// Aggregate flops per byte over the whole graph.
pub fn phase_intensity(g: &LayerGraph) -> f64 {
    let bytes = g.total_bytes();
    if bytes == 0 {
        0.0
    } else {
        g.total_flops() as f64 / bytes as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundedness {
    MemoryBound,
    ComputeBound,
}

/// Intensity at or below the ridge point counts as memory bound.
pub fn classify_intensity(ai: f64, dev: &DeviceSpec) -> Boundedness {
    if ai <= dev.ridge_point() {
        Boundedness::MemoryBound
    } else {
        Boundedness::ComputeBound
    }
}

pub fn classify(g: &LayerGraph, dev: &DeviceSpec) -> Boundedness {
    classify_intensity(phase_intensity(g), dev)
}

/// Representative graph of a phase: the prompt pass or the mid-sequence decode step.
pub fn phase_graph(cfg: &LlmConfig, req: &Request, phase: Phase) -> Result<LayerGraph> {
    let pos = match phase {
        Phase::Prefill => req.prompt_len,
        Phase::Decode => req.decode_position(),
    };
    build_layer_graph(cfg, req, phase, pos)
}

/// Ratio of roofline layer time on `base` to that on `modified`.
pub fn whatif_speedup(
    cfg: &LlmConfig,
    req: &Request,
    phase: Phase,
    base: &DeviceSpec,
    modified: &DeviceSpec,
) -> Result<f64> {
    base.validate()?;
    if !(modified.peak_ops > 0.0 && modified.mem_bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!(
            "modified device {} needs positive compute and bandwidth",
            modified.name
        )));
    }
    let g = phase_graph(cfg, req, phase)?;
    Ok(graph_time(&g, base) / graph_time(&g, modified))
}

/// One point on a roofline plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub label: String,
    pub device: String,
    pub phase: Phase,
    pub prompt_len: u64,
    pub arithmetic_intensity: f64,
    /// ops/s
    pub attainable_perf: f64,
    pub boundedness: Boundedness,
}

/// Aggregate operating point of a phase graph on a device.
pub fn roofline_point(
    cfg: &LlmConfig,
    req: &Request,
    phase: Phase,
    dev: &DeviceSpec,
) -> Result<RooflinePoint> {
    dev.validate()?;
    let g = phase_graph(cfg, req, phase)?;
    let ai = phase_intensity(&g);
    let tag = match phase {
        Phase::Prefill => "p",
        Phase::Decode => "d",
    };
    Ok(RooflinePoint {
        label: format!("{tag}{}", req.prompt_len),
        device: dev.name.clone(),
        phase,
        prompt_len: req.prompt_len,
        arithmetic_intensity: ai,
        attainable_perf: g.total_flops() as f64 / graph_time(&g, dev),
        boundedness: classify_intensity(ai, dev),
    })
}

/// Roofline ceiling `min(peak, bandwidth * ai)`.
pub fn attainable(dev: &DeviceSpec, ai: f64) -> f64 {
    dev.peak_ops.min(dev.mem_bandwidth * ai)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;

    fn small() -> LlmConfig {
        LlmConfig {
            name: "small".into(),
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            head_dim: 16,
            ffn_dim: 256,
            vocab_size: 1000,
            weight_bytes: 2,
            act_bytes: 2,
        }
    }

    fn node(kind: KernelKind) -> impl Fn(&LayerGraph) -> &KernelNode {
        move |g| g.nodes.iter().find(|n| n.kind == kind).unwrap()
    }

    #[test]
    fn decode_qkv_is_matrix_vector() {
        let cfg = small();
        let req = Request::new(10, 5).unwrap();
        let g = build_layer_graph(&cfg, &req, Phase::Decode, 12).unwrap();
        let d = cfg.hidden_dim;
        assert_eq!(node(KernelKind::QkvProj)(&g).flops, 2 * 3 * d * d);
        let p = build_layer_graph(&cfg, &req, Phase::Prefill, 10).unwrap();
        assert_eq!(node(KernelKind::QkvProj)(&p).flops, 10 * 2 * 3 * d * d);
    }

    #[test]
    fn graphs_are_valid_dags() {
        let cfg = small();
        let req = Request::new(7, 3).unwrap();
        for (phase, pos) in [(Phase::Prefill, 7), (Phase::Decode, 1), (Phase::Decode, 10)] {
            let g = build_layer_graph(&cfg, &req, phase, pos).unwrap();
            g.validate().unwrap();
            assert_eq!(g.nodes.len(), 12);
        }
    }

    #[test]
    fn invalid_graphs_rejected() {
        let cfg = small();
        let req = Request::new(7, 3).unwrap();
        let mut g = build_layer_graph(&cfg, &req, Phase::Prefill, 7).unwrap();
        g.edges.push((11, 0));
        assert!(g.validate().is_err());
        let mut g = build_layer_graph(&cfg, &req, Phase::Prefill, 7).unwrap();
        g.edges
            .retain(|&(s, d)| (s, d) != (6, 7) && (s, d) != (6, 11));
        assert!(g.validate().is_err());
        assert!(build_layer_graph(&cfg, &req, Phase::Decode, 11).is_err());
        assert!(build_layer_graph(&cfg, &req, Phase::Decode, 0).is_err());
        assert!(Request::new(0, 4).is_err());
        assert!(Request::new(4, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small();
        cfg.head_dim = 15;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.weight_bytes = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_cache_scales_with_sequence() {
        let cfg = small();
        let a = global_features(&cfg, &Request::new(50, 1).unwrap(), Phase::Prefill, None).unwrap();
        let b =
            global_features(&cfg, &Request::new(100, 1).unwrap(), Phase::Prefill, None).unwrap();
        assert_eq!(b.kv_cache_bytes, 2.0 * a.kv_cache_bytes);
        assert_eq!(a.kv_cache_bytes, (2 * 2 * 64 * 50 * 2) as f64);
        assert!(a.prefill_energy.is_none());
        assert!(global_features(
            &cfg,
            &Request::new(5, 5).unwrap(),
            Phase::Prefill,
            Some(1.0)
        )
        .is_err());
        let t =
            global_features(&cfg, &Request::new(5, 5).unwrap(), Phase::Decode, Some(1.0)).unwrap();
        assert_eq!(t.prefill_energy, Some(1.0));
        assert_eq!(t.to_vec().len(), a.to_vec().len() + 1);
    }

    #[test]
    fn residual_intensity_by_hand() {
        let cfg = small();
        let req = Request::new(4, 1).unwrap();
        let g = build_layer_graph(&cfg, &req, Phase::Prefill, 4).unwrap();
        let res = node(KernelKind::Residual)(&g).clone();
        let only = LayerGraph {
            phase: Phase::Prefill,
            nodes: vec![res],
            edges: vec![],
        };
        // 2 flops per element over 3 * act_bytes bytes per element.
        assert_eq!(phase_intensity(&only), 2.0 / (3.0 * 2.0));
    }

    #[test]
    fn roofline_basics() {
        let dev = assets::device("rk3588").unwrap();
        let mut n = KernelNode::new(KernelKind::Residual, 0, 0, 1000, 0, 0, 0);
        assert_eq!(roofline_time(&n, &dev), 1000.0 / dev.mem_bandwidth);
        // Exactly at the ridge point both terms agree.
        n.act_bytes_loaded = 2048;
        n.flops = (dev.ridge_point() * 2048.0).round() as u64;
        let c = n.flops as f64 / dev.peak_ops;
        let m = 2048.0 / dev.mem_bandwidth;
        assert!((c - m).abs() <= 1e-12 * m);
    }

    #[test]
    fn classify_tie_and_compute_bound() {
        let dev = DeviceSpec {
            name: "toy".into(),
            peak_ops: 100.0,
            mem_bandwidth: 10.0,
            idle_power: 1.0,
            active_power: 2.0,
            dram_capacity: 0.0,
            accelerator: Accelerator::Npu,
        };
        assert_eq!(classify_intensity(10.0, &dev), Boundedness::MemoryBound);
        assert_eq!(classify_intensity(100.0, &dev), Boundedness::ComputeBound);
        assert_eq!(classify_intensity(9.0, &dev), Boundedness::MemoryBound);
    }

    #[test]
    fn whatif_identity_and_rejection() {
        let cfg = assets::llm("q1.5").unwrap();
        let dev = assets::device("rk3588").unwrap();
        let req = Request::new(50, 1).unwrap();
        assert_eq!(
            whatif_speedup(&cfg, &req, Phase::Prefill, &dev, &dev).unwrap(),
            1.0
        );
        let broken = dev.scaled("broken", 0.0, 1.0);
        assert!(whatif_speedup(&cfg, &req, Phase::Prefill, &dev, &broken).is_err());
    }

    #[test]
    fn prefill_more_intense_than_decode() {
        let cfg = assets::llm("q1.5").unwrap();
        let req = Request::new(128, 1).unwrap();
        let p = build_layer_graph(&cfg, &req, Phase::Prefill, 128).unwrap();
        let d = build_layer_graph(&cfg, &req, Phase::Decode, 129).unwrap();
        assert!(phase_intensity(&p) > phase_intensity(&d));
    }

    #[test]
    fn decode_intensity_independent_of_output_len() {
        let cfg = assets::llm("q1.5").unwrap();
        let a = build_layer_graph(&cfg, &Request::new(64, 1).unwrap(), Phase::Decode, 65).unwrap();
        let b =
            build_layer_graph(&cfg, &Request::new(64, 900).unwrap(), Phase::Decode, 65).unwrap();
        assert_eq!(phase_intensity(&a), phase_intensity(&b));
    }

    #[test]
    fn permutation_preserves_structure() {
        let cfg = small();
        let g = build_layer_graph(&cfg, &Request::new(3, 3).unwrap(), Phase::Prefill, 3).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let p = g.permuted(&perm);
        p.validate().unwrap();
        assert_eq!(p.total_flops(), g.total_flops());
        assert_eq!(p.nodes[11], g.nodes[0]);
    }
}
