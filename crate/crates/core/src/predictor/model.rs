//! Trained predictor heads and inference entry points.

use serde::{Deserialize, Serialize};

use super::dataset::{request_latency, GraphSample};
use super::features::{encode_graph, global_numeric, Encoded, Standardizer};
use super::gnn::Net;
use crate::accounting::{LlmEnergyEstimator, LlmEstimate};
use crate::error::{ensure, Error, Result};
use crate::workload::{
    build_layer_graph, global_features, DeviceSpec, GlobalFeatures, LayerGraph, LlmConfig, Phase,
    Request,
};

pub const PARAMS_VERSION: u32 = 1;

/// One network together with the feature statistics it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub node_norm: Standardizer,
    pub global_norm: Standardizer,
    pub net: Net,
}

impl HeadParams {
    pub fn encode_input(
        &self,
        graph: &LayerGraph,
        globals: &GlobalFeatures,
        target_j: Option<f64>,
    ) -> Result<Encoded> {
        let g = global_numeric(globals);
        ensure(g.len() == self.global_norm.dim(), || {
            format!(
                "expected {} global features, got {}",
                self.global_norm.dim(),
                g.len()
            )
        })?;
        Ok(Encoded {
            graph: encode_graph(graph, &self.node_norm)?,
            globals: self.global_norm.apply(&g),
            target: target_j.map_or(0.0, f64::ln),
        })
    }

    /// Energy in joules.
    pub fn predict(&self, graph: &LayerGraph, globals: &GlobalFeatures) -> Result<f64> {
        let e = self.encode_input(graph, globals, None)?;
        Ok(self.net.predict(&e.graph, &e.globals)?.exp())
    }

    /// Pooled graph embedding after message passing.
    pub fn embed(&self, graph: &LayerGraph, globals: &GlobalFeatures) -> Result<Vec<f64>> {
        let e = self.encode_input(graph, globals, None)?;
        Ok(self.net.forward(&e.graph, &e.globals)?.embedding)
    }
}

/// Prefill head plus total head. The total head sees the prefill energy as
/// an extra global feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseParams {
    pub version: u32,
    pub prefill: HeadParams,
    pub total: HeadParams,
}

impl TwoPhaseParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        if p.version != PARAMS_VERSION {
            return Err(Error::Config(format!(
                "unsupported parameter version {}",
                p.version
            )));
        }
        Ok(p)
    }

    /// `(prefill_j, total_j)` for a sample, chaining the predicted prefill
    /// energy into the total head.
    pub fn predict_sample(&self, s: &GraphSample) -> Result<(f64, f64)> {
        let pre = predict_prefill(&s.prefill_graph, &s.prefill_globals, self)?;
        let total = predict_total(
            &s.decode_graph,
            &s.total_globals.with_prefill_energy(pre),
            self,
        )?;
        Ok((pre, total))
    }
}

/// Graph-level embedding from the prefill head.
pub fn encode(
    graph: &LayerGraph,
    globals: &GlobalFeatures,
    params: &TwoPhaseParams,
) -> Result<Vec<f64>> {
    let head = match graph.phase {
        Phase::Prefill => &params.prefill,
        Phase::Decode => &params.total,
    };
    head.embed(graph, globals)
}

pub fn predict_prefill(
    graph: &LayerGraph,
    globals: &GlobalFeatures,
    params: &TwoPhaseParams,
) -> Result<f64> {
    ensure(
        graph.phase == Phase::Prefill && globals.phase == Phase::Prefill,
        || "prefill prediction needs a prefill graph and prefill features".into(),
    )?;
    ensure(globals.prefill_energy.is_none(), || {
        "prefill features must not carry an energy".into()
    })?;
    params.prefill.predict(graph, globals)
}

/// Total request energy. `globals` must carry the prefill energy.
pub fn predict_total(
    graph: &LayerGraph,
    globals: &GlobalFeatures,
    params: &TwoPhaseParams,
) -> Result<f64> {
    ensure(
        graph.phase == Phase::Decode && globals.phase == Phase::Decode,
        || "total prediction needs a decode graph and decode features".into(),
    )?;
    ensure(globals.prefill_energy.is_some(), || {
        "total prediction needs the prefill energy in the global features".into()
    })?;
    params.total.predict(graph, globals)
}

/// Prices requests with a trained two-phase predictor. Latency comes from
/// the roofline model.
#[derive(Clone, Debug)]
pub struct TwoPhasePredictor {
    pub params: TwoPhaseParams,
}

impl LlmEnergyEstimator for TwoPhasePredictor {
    fn estimate(&self, cfg: &LlmConfig, req: &Request, dev: &DeviceSpec) -> Result<LlmEstimate> {
        dev.validate()?;
        let cfg = cfg.for_device(dev);
        let pg = build_layer_graph(&cfg, req, Phase::Prefill, req.prompt_len)?.with_roofline(dev);
        let dg =
            build_layer_graph(&cfg, req, Phase::Decode, req.decode_position())?.with_roofline(dev);
        let pre = predict_prefill(
            &pg,
            &global_features(&cfg, req, Phase::Prefill, None)?,
            &self.params,
        )?;
        let total = predict_total(
            &dg,
            &global_features(&cfg, req, Phase::Decode, Some(pre))?,
            &self.params,
        )?;
        Ok(LlmEstimate {
            prefill_j: pre,
            total_j: total.max(pre),
            latency_s: request_latency(&cfg, req, dev)?,
        })
    }
}
