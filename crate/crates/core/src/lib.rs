//! Carbon footprint estimation for LLM inference on edge devices.
//!
//! The crate is split along the estimation pipeline:
//!
//! - [`device_models`]: closed-form peripheral energy/power models and their fitting.
//! - [`workload`]: per-layer kernel graphs, roofline timing and what-if analysis.
//! - [`predictor`]: the two-phase GNN inference-energy predictor, its baselines and
//!   the synthetic energy oracle used to build training data.
//! - [`embodied`]: unit-level embodied carbon for SoC bills of materials.
//! - [`accounting`]: operational carbon, application pipelines and break-even analysis.
//! - [`assets`]: bundled device specs, BOMs, grid intensities and demo pipelines.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod assets;
pub mod device_models;
pub mod embodied;
pub mod error;
pub mod predictor;
pub mod workload;

pub use error::{Error, Result};
