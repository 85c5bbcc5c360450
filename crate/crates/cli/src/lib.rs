//! Command-line front end: argument definitions, subcommands and output.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod output;

use output::Format;

#[derive(Debug, Parser)]
#[command(name = "edge-carbon", version, about)]
pub struct Cli {
    /// Seed for dataset generation, splitting and training.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the primary artifact here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Asset root (defaults to $CO2METER_ASSETS, then ./assets).
    #[arg(long, global = true)]
    pub assets: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a peripheral power/energy model to a measurement CSV.
    Fit {
        /// net | camera | mic | video | speaker | display
        #[arg(long)]
        model: String,
        csv: PathBuf,
    },
    /// Energy and latency of one LLM request on a device.
    Estimate {
        #[arg(long)]
        device: String,
        #[arg(long)]
        llm: String,
        #[arg(long)]
        prompt: u64,
        #[arg(long)]
        output: u64,
        /// Trained predictor parameters; the roofline oracle is used otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Generate a labelled dataset (JSON lines) from the roofline oracle.
    Dataset {
        /// JSON list of LLM configs (default: bundled grid).
        #[arg(long)]
        grid: Option<PathBuf>,
        /// JSON list of device specs (default: all bundled devices).
        #[arg(long)]
        devices: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        /// trace | mixed
        #[arg(long, default_value = "trace")]
        sampler: String,
    },
    /// Train the two-phase predictor; parameters go to --out.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        hyper: commands::HyperArgs,
        /// Metrics destination (default stdout).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate trained parameters on each split of a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Also train and score the globals-only and single-phase baselines.
        #[arg(long)]
        baselines: bool,
        #[command(flatten)]
        hyper: commands::HyperArgs,
    },
    /// Embodied carbon breakdown of a bill of materials.
    Embodied {
        /// Bundled BOM name or JSON path.
        #[arg(long)]
        bom: String,
        /// Components attributed to LLM inference (default depends on the board).
        #[arg(long, value_delimiter = ',')]
        llm_components: Option<Vec<String>>,
    },
    /// Hardware what-if: prefill speedup and embodied carbon increase.
    Whatif {
        /// rk-mem | rk-npu
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "q1.5")]
        llm: String,
        #[arg(long, value_delimiter = ',', default_value = "50,100,150")]
        prompts: Vec<u64>,
    },
    /// Daily requests at which a lower-energy device repays its embodied carbon.
    Breakeven {
        #[arg(long, default_value = "rk3588")]
        base: String,
        #[arg(long, default_value = "agx_orin")]
        alt: String,
        /// Pipeline run on both devices.
        #[arg(long, default_value = "rk3588-mic-spk-d128")]
        pipeline: String,
        #[arg(long, default_value_t = edge_carbon::accounting::DEFAULT_LIFESPAN_YEARS)]
        lifespan: f64,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Roofline operating points of prefill and decode.
    Roofline {
        #[arg(long, value_delimiter = ',', default_value = "rk3588,agx_orin")]
        devices: Vec<String>,
        #[arg(long, default_value = "q1.5")]
        llm: String,
        #[arg(long, value_delimiter = ',', default_value = "50,100,150")]
        prompts: Vec<u64>,
    },
    /// Per-stage energy of an application pipeline.
    Pipeline {
        /// Bundled pipeline name or JSON path.
        #[arg(long)]
        pipeline: String,
        /// Directory of fitted peripheral models (default: bundled).
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}
