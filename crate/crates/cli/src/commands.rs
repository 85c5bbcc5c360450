use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use edge_carbon::accounting::{
    app_energy, breakeven_requests, AppPipeline, EnergyBreakdown, LlmEnergyEstimator,
    PeripheralModels,
};
use edge_carbon::assets::{self, asset_root, load_named, read_json, versioned};
use edge_carbon::device_models::{fit, read_samples_csv, FitReport, ModelKind};
use edge_carbon::embodied::{
    delta_embodied, report_with_fraction, soc_embodied, whatif_bom, EmbodiedReport, SocBom,
};
use edge_carbon::predictor::{
    baseline_global_regressor, baseline_single_phase, evaluate, gen_oracle_dataset, read_jsonl,
    select, split_indices, train, write_jsonl, EvalReport, GraphSample, Metrics, RequestSampler,
    RooflineOracle, TrainConfig, TwoPhaseParams, TwoPhasePredictor,
};
use edge_carbon::workload::{
    attainable, roofline_point, whatif_speedup, DeviceSpec, LlmConfig, Phase, Request,
    RooflinePoint,
};
use edge_carbon::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::output::{emit, sink, Table};
use crate::{Cli, Command};

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    pub hidden: usize,
}

impl HyperArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            hidden: self.hidden,
            seed,
            ..TrainConfig::default()
        }
    }
}

struct Ctx {
    seed: u64,
    format: crate::output::Format,
    out: Option<PathBuf>,
    root: PathBuf,
}

impl Ctx {
    fn emit<T: Serialize>(&self, value: &T, table: impl FnOnce() -> Table) -> Result<()> {
        emit(value, table, self.format, self.out.as_deref())
    }

    fn device(&self, name: &str) -> Result<DeviceSpec> {
        let d: DeviceSpec = load_named(&self.root, "devices", name)?;
        d.validate()?;
        Ok(d)
    }

    fn llm(&self, name: &str) -> Result<LlmConfig> {
        let c: LlmConfig = load_named(&self.root, "llms", name)?;
        c.validate()?;
        Ok(c)
    }

    fn bom(&self, name: &str) -> Result<SocBom> {
        let b: SocBom = load_named(&self.root, "boms", name)?;
        b.validate()?;
        Ok(b)
    }

    fn estimator(&self, params: Option<&Path>) -> Result<Box<dyn LlmEnergyEstimator>> {
        Ok(match params {
            Some(p) => Box::new(TwoPhasePredictor {
                params: load_params(p)?,
            }),
            None => Box::new(RooflineOracle),
        })
    }

    fn peripheral_models(&self, dir: Option<&Path>) -> Result<PeripheralModels> {
        let dir = dir.map_or_else(|| versioned(&self.root).join("models"), Path::to_path_buf);
        let mut reports = Vec::new();
        for name in ["mic", "camera", "video", "speaker", "display"] {
            let p = dir.join(format!("{name}.json"));
            if p.is_file() {
                reports.push(read_json::<FitReport>(&p)?);
            }
        }
        Ok(PeripheralModels::from_reports(&reports))
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn load_params(path: &Path) -> Result<TwoPhaseParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    TwoPhaseParams::from_json(&text)
}

fn load_dataset(path: &Path) -> Result<Vec<GraphSample>> {
    read_jsonl(BufReader::new(open(path)?))
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        format: cli.format,
        out: cli.out,
        root: cli.assets.unwrap_or_else(asset_root),
    };
    match cli.command {
        Command::Fit { model, csv } => cmd_fit(&ctx, &model, &csv),
        Command::Estimate {
            device,
            llm,
            prompt,
            output,
            params,
        } => cmd_estimate(
            &ctx,
            &device,
            &llm,
            Request::new(prompt, output)?,
            params.as_deref(),
        ),
        Command::Dataset {
            grid,
            devices,
            n,
            sigma,
            sampler,
        } => cmd_dataset(
            &ctx,
            grid.as_deref(),
            devices.as_deref(),
            n,
            sigma,
            &sampler,
        ),
        Command::Train {
            dataset,
            hyper,
            metrics,
        } => cmd_train(&ctx, &dataset, &hyper, metrics.as_deref()),
        Command::Eval {
            dataset,
            params,
            baselines,
            hyper,
        } => cmd_eval(&ctx, &dataset, &params, baselines, &hyper),
        Command::Embodied {
            bom,
            llm_components,
        } => cmd_embodied(&ctx, &bom, llm_components),
        Command::Whatif {
            scenario,
            llm,
            prompts,
        } => cmd_whatif(&ctx, &scenario, &llm, &prompts),
        Command::Breakeven {
            base,
            alt,
            pipeline,
            lifespan,
            params,
        } => cmd_breakeven(&ctx, &base, &alt, &pipeline, lifespan, params.as_deref()),
        Command::Roofline {
            devices,
            llm,
            prompts,
        } => cmd_roofline(&ctx, &devices, &llm, &prompts),
        Command::Pipeline {
            pipeline,
            models,
            params,
        } => cmd_pipeline(&ctx, &pipeline, models.as_deref(), params.as_deref()),
    }
}

fn cmd_fit(ctx: &Ctx, model: &str, csv: &Path) -> Result<()> {
    let kind = ModelKind::parse(model)?;
    let samples = read_samples_csv(open(csv)?)?;
    let report = fit(kind, &samples)?;
    ctx.emit(&report, || {
        let mut t = Table::new(&["key", "value"]);
        t.row(["model", kind.name()]);
        for (k, v) in report.model.params() {
            t.row([k.to_string(), v.to_string()]);
        }
        t.row(["mae".to_string(), report.mae.to_string()]);
        t.row(["max_abs_err".to_string(), report.max_abs_err.to_string()]);
        t.row(["n_samples".to_string(), report.n_samples.to_string()]);
        t
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub device: String,
    pub llm: String,
    pub prompt_len: u64,
    pub output_len: u64,
    pub estimator: String,
    pub prefill_j: f64,
    pub total_j: f64,
    pub latency_s: f64,
}

fn cmd_estimate(
    ctx: &Ctx,
    device: &str,
    llm: &str,
    req: Request,
    params: Option<&Path>,
) -> Result<()> {
    let dev = ctx.device(device)?;
    let cfg = ctx.llm(llm)?.for_device(&dev);
    let est = ctx.estimator(params)?.estimate(&cfg, &req, &dev)?;
    let r = EstimateReport {
        device: dev.name,
        llm: cfg.name,
        prompt_len: req.prompt_len,
        output_len: req.output_len,
        estimator: if params.is_some() {
            "two_phase_gnn"
        } else {
            "roofline"
        }
        .into(),
        prefill_j: est.prefill_j,
        total_j: est.total_j,
        latency_s: est.latency_s,
    };
    ctx.emit(&r, || {
        let mut t = Table::new(&["key", "value"]);
        t.row(["device", &r.device])
            .row(["llm", &r.llm])
            .row(["estimator", &r.estimator]);
        for (k, v) in [
            ("prompt_len", r.prompt_len as f64),
            ("output_len", r.output_len as f64),
            ("prefill_j", r.prefill_j),
            ("total_j", r.total_j),
            ("latency_s", r.latency_s),
        ] {
            t.row([k.to_string(), v.to_string()]);
        }
        t
    })
}

fn cmd_dataset(
    ctx: &Ctx,
    grid: Option<&Path>,
    devices: Option<&Path>,
    n: usize,
    sigma: f64,
    sampler: &str,
) -> Result<()> {
    let base = versioned(&ctx.root);
    let grid: Vec<LlmConfig> =
        read_json(&grid.map_or_else(|| base.join("grid.json"), Path::to_path_buf))?;
    let devices: Vec<DeviceSpec> =
        read_json(&devices.map_or_else(|| base.join("devices.json"), Path::to_path_buf))?;
    let samples = gen_oracle_dataset(
        &grid,
        &devices,
        RequestSampler::parse(sampler)?,
        sigma,
        n,
        ctx.seed,
    )?;
    let mut w = sink(ctx.out.as_deref())?;
    write_jsonl(&samples, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Metrics of both heads on each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train: Option<EvalReport>,
    pub val: Option<EvalReport>,
    pub test: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<BaselineMetrics>,
}

/// Total-energy metrics on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub two_phase: Metrics,
    pub single_phase: Metrics,
    pub global_ridge: Metrics,
}

fn split_metrics(
    ds: &[GraphSample],
    params: &TwoPhaseParams,
    cfg: &TrainConfig,
) -> Result<SplitMetrics> {
    let split = split_indices(ds.len(), cfg.train_frac, cfg.val_frac, cfg.seed)?;
    let part = |idx: &[usize]| -> Result<Option<EvalReport>> {
        if idx.is_empty() {
            Ok(None)
        } else {
            evaluate(&select(ds, idx), params).map(Some)
        }
    };
    Ok(SplitMetrics {
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        train: part(&split.train)?,
        val: part(&split.val)?,
        test: part(&split.test)?,
        baselines: None,
    })
}

fn metrics_table(m: &SplitMetrics) -> Table {
    let mut t = Table::new(&["split", "head", "mape", "eb10", "n"]);
    for (split, r) in [("train", &m.train), ("val", &m.val), ("test", &m.test)] {
        if let Some(r) = r {
            for (head, x) in [("prefill", r.prefill), ("total", r.total)] {
                t.row([
                    split.to_string(),
                    head.to_string(),
                    x.mape.to_string(),
                    x.eb10.to_string(),
                    x.n.to_string(),
                ]);
            }
        }
    }
    if let Some(b) = &m.baselines {
        for (name, x) in [
            ("two_phase", b.two_phase),
            ("single_phase", b.single_phase),
            ("global_ridge", b.global_ridge),
        ] {
            t.row([
                "test".to_string(),
                name.to_string(),
                x.mape.to_string(),
                x.eb10.to_string(),
                x.n.to_string(),
            ]);
        }
    }
    t
}

fn cmd_train(ctx: &Ctx, dataset: &Path, hyper: &HyperArgs, metrics: Option<&Path>) -> Result<()> {
    let out = ctx
        .out
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("train needs --out for the parameter file".into()))?;
    let ds = load_dataset(dataset)?;
    let cfg = hyper.config(ctx.seed);
    let (params, _) = train(&ds, &cfg)?;
    let mut w = sink(Some(out))?;
    w.write_all(params.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    let m = split_metrics(&ds, &params, &cfg)?;
    emit(&m, || metrics_table(&m), ctx.format, metrics)
}

fn cmd_eval(
    ctx: &Ctx,
    dataset: &Path,
    params: &Path,
    baselines: bool,
    hyper: &HyperArgs,
) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let params = load_params(params)?;
    let cfg = hyper.config(ctx.seed);
    let mut m = split_metrics(&ds, &params, &cfg)?;
    if baselines {
        let split = split_indices(ds.len(), cfg.train_frac, cfg.val_frac, cfg.seed)?;
        let (tr, va, te) = (
            select(&ds, &split.train),
            select(&ds, &split.val),
            select(&ds, &split.test),
        );
        if te.is_empty() {
            return Err(Error::InvalidInput(
                "baselines need a non-empty test split".into(),
            ));
        }
        m.baselines = Some(BaselineMetrics {
            two_phase: evaluate(&te, &params)?.total,
            single_phase: baseline_single_phase(&tr, &va, &te, &cfg)?.1,
            global_ridge: baseline_global_regressor(&tr, &te)?.1,
        });
    }
    ctx.emit(&m, || metrics_table(&m))
}

fn cmd_embodied(ctx: &Ctx, bom: &str, llm_components: Option<Vec<String>>) -> Result<()> {
    let b = ctx.bom(bom)?;
    let names: Vec<String> = llm_components.unwrap_or_else(|| {
        assets::llm_components(&b.name)
            .iter()
            .map(|s| s.to_string())
            .collect()
    });
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let r: EmbodiedReport = report_with_fraction(&b, &refs)?;
    ctx.emit(&r, || {
        let mut t = Table::new(&["component", "kg"]);
        for c in &r.per_component {
            t.row([c.name.clone(), c.kg.to_string()]);
        }
        t.row(["total".to_string(), r.total.to_string()]);
        t
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupPoint {
    pub prompt_len: u64,
    pub prefill_speedup: f64,
    pub decode_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatifReport {
    pub scenario: String,
    pub llm: String,
    pub base_device: DeviceSpec,
    pub modified_device: DeviceSpec,
    pub embodied_base_kg: f64,
    pub embodied_modified_kg: f64,
    pub embodied_increase_pct: f64,
    pub speedups: Vec<SpeedupPoint>,
}

fn cmd_whatif(ctx: &Ctx, scenario: &str, llm: &str, prompts: &[u64]) -> Result<()> {
    let sc = assets::scenario(scenario)?;
    let base = ctx.device(sc.base_device)?;
    let modified = base.scaled(
        &format!("{}-{}", base.name, sc.name),
        sc.compute_scale,
        sc.bandwidth_scale,
    );
    let cfg = ctx.llm(llm)?.for_device(&base);
    let bom = ctx.bom(sc.base_bom)?;
    let before = soc_embodied(&bom)?.total;
    let after = soc_embodied(&whatif_bom(&bom, &sc.bom_mods)?)?.total;
    let speedups = prompts
        .iter()
        .map(|&p| {
            let req = Request::new(p, 1)?;
            Ok(SpeedupPoint {
                prompt_len: p,
                prefill_speedup: whatif_speedup(&cfg, &req, Phase::Prefill, &base, &modified)?,
                decode_speedup: whatif_speedup(&cfg, &req, Phase::Decode, &base, &modified)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let r = WhatifReport {
        scenario: sc.name.into(),
        llm: cfg.name.clone(),
        base_device: base,
        modified_device: modified,
        embodied_base_kg: before,
        embodied_modified_kg: after,
        embodied_increase_pct: 100.0 * (after - before) / before,
        speedups,
    };
    ctx.emit(&r, || {
        let mut t = Table::new(&["series", "x", "y"]);
        for s in &r.speedups {
            t.row([
                "prefill_speedup".to_string(),
                s.prompt_len.to_string(),
                s.prefill_speedup.to_string(),
            ]);
        }
        for s in &r.speedups {
            t.row([
                "decode_speedup".to_string(),
                s.prompt_len.to_string(),
                s.decode_speedup.to_string(),
            ]);
        }
        t.row([
            "embodied_increase_pct".to_string(),
            "0".to_string(),
            r.embodied_increase_pct.to_string(),
        ]);
        t
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakevenRow {
    pub region: String,
    pub ci_kg_per_kwh: f64,
    pub requests_per_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakevenReport {
    pub base: String,
    pub alt: String,
    pub pipeline: String,
    pub base_energy_j: f64,
    pub alt_energy_j: f64,
    pub delta_embodied_kg: f64,
    pub lifespan_years: f64,
    pub rows: Vec<BreakevenRow>,
}

/// The pipeline with its LLM stage moved to `dev`.
fn on_device(p: &AppPipeline, dev: &DeviceSpec) -> AppPipeline {
    let mut q = p.clone();
    q.llm.config = p.llm.config.for_device(dev);
    q.llm.device = dev.clone();
    q
}

fn cmd_breakeven(
    ctx: &Ctx,
    base: &str,
    alt: &str,
    pipeline: &str,
    lifespan: f64,
    params: Option<&Path>,
) -> Result<()> {
    let p: AppPipeline = load_named(&ctx.root, "pipelines", pipeline)?;
    let models = ctx.peripheral_models(None)?;
    let est = ctx.estimator(params)?;
    let (bd, ad) = (ctx.device(base)?, ctx.device(alt)?);
    let eb: EnergyBreakdown = app_energy(&on_device(&p, &bd), &models, est.as_ref())?;
    let ea = app_energy(&on_device(&p, &ad), &models, est.as_ref())?;
    let delta = delta_embodied(&ctx.bom(base)?, &ctx.bom(alt)?)?;
    let table: std::collections::BTreeMap<String, f64> =
        read_json(&versioned(&ctx.root).join("ci.json"))?;
    let mut rows = Vec::new();
    for (region, ci) in table {
        let ci = edge_carbon::accounting::CarbonIntensity::new(ci, &region)?;
        rows.push(BreakevenRow {
            requests_per_day: breakeven_requests(delta, eb.total - ea.total, &ci, lifespan)?,
            ci_kg_per_kwh: ci.value,
            region,
        });
    }
    rows.sort_by(|a, b| a.ci_kg_per_kwh.total_cmp(&b.ci_kg_per_kwh));
    let r = BreakevenReport {
        base: bd.name,
        alt: ad.name,
        pipeline: p.name,
        base_energy_j: eb.total,
        alt_energy_j: ea.total,
        delta_embodied_kg: delta,
        lifespan_years: lifespan,
        rows,
    };
    ctx.emit(&r, || {
        let mut t = Table::new(&["region", "ci_kg_per_kwh", "requests_per_day"]);
        for row in &r.rows {
            t.row([
                row.region.clone(),
                row.ci_kg_per_kwh.to_string(),
                row.requests_per_day.to_string(),
            ]);
        }
        t
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roof {
    pub device: String,
    pub peak_ops: f64,
    pub mem_bandwidth: f64,
    pub ridge_point: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineReport {
    pub llm: String,
    pub roofs: Vec<Roof>,
    pub points: Vec<RooflinePoint>,
}

fn cmd_roofline(ctx: &Ctx, devices: &[String], llm: &str, prompts: &[u64]) -> Result<()> {
    let base = ctx.llm(llm)?;
    let mut roofs = Vec::new();
    let mut points = Vec::new();
    let mut devs = Vec::new();
    for name in devices {
        let dev = ctx.device(name)?;
        let cfg = base.for_device(&dev);
        for phase in [Phase::Prefill, Phase::Decode] {
            for &p in prompts {
                points.push(roofline_point(&cfg, &Request::new(p, 1)?, phase, &dev)?);
            }
        }
        roofs.push(Roof {
            device: dev.name.clone(),
            peak_ops: dev.peak_ops,
            mem_bandwidth: dev.mem_bandwidth,
            ridge_point: dev.ridge_point(),
        });
        devs.push(dev);
    }
    let r = RooflineReport {
        llm: base.name,
        roofs,
        points,
    };
    ctx.emit(&r, || {
        let mut t = Table::new(&["series", "device", "label", "x", "y"]);
        for dev in &devs {
            for k in -4..=12 {
                let ai = 2f64.powi(k);
                t.row([
                    "roof".to_string(),
                    dev.name.clone(),
                    String::new(),
                    ai.to_string(),
                    attainable(dev, ai).to_string(),
                ]);
            }
        }
        for p in &r.points {
            t.row([
                "point".to_string(),
                p.device.clone(),
                p.label.clone(),
                p.arithmetic_intensity.to_string(),
                p.attainable_perf.to_string(),
            ]);
        }
        t
    })
}

fn cmd_pipeline(
    ctx: &Ctx,
    pipeline: &str,
    models: Option<&Path>,
    params: Option<&Path>,
) -> Result<()> {
    let p: AppPipeline = load_named(&ctx.root, "pipelines", pipeline)?;
    let models = ctx.peripheral_models(models)?;
    let b = app_energy(&p, &models, ctx.estimator(params)?.as_ref())?;
    ctx.emit(&b, || {
        let mut t = Table::new(&["stage", "joules"]);
        for (k, v) in b.stages() {
            t.row([k.to_string(), v.to_string()]);
        }
        t.row(["total".to_string(), b.total.to_string()]);
        t
    })
}
