//! Two-phase GNN energy predictor for LLM inference.
//!
//! A prefill head estimates the energy of the prompt pass from its kernel
//! graph. A total head estimates whole-request energy from a representative
//! decode-step graph, with the prefill energy as an extra global feature.
//! Training data comes from a roofline oracle with multiplicative noise.

mod dataset;
mod features;
mod gnn;
mod model;
mod train;

pub use dataset::{
    gen_oracle_dataset, read_jsonl, request_latency, select, split_indices, write_jsonl,
    GraphSample, RequestSampler, RooflineOracle, Split, MEMORY_BOUND_POWER_SHARE,
};
pub use features::{
    encode_graph, global_numeric, node_numeric, Encoded, EncodedGraph, Standardizer, NODE_DIM,
};
pub use gnn::{Cache, Net};
pub use model::{
    encode, predict_prefill, predict_total, HeadParams, TwoPhaseParams, TwoPhasePredictor,
    PARAMS_VERSION,
};
pub use train::{
    baseline_global_regressor, baseline_single_phase, evaluate, grad_check, head_gradient, metrics,
    relative_error, train, train_head, train_on, Adam, EpochRecord, EvalReport, GradCheck,
    HeadExample, Metrics, RidgeRegressor, TrainConfig, TrainReport, GRAD_FLOOR, RIDGE_LAMBDA,
};
