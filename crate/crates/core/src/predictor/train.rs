//! Training loop, metrics, gradient checking and baselines.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{select, split_indices, GraphSample, Split};
use super::features::{global_numeric, node_numeric, Encoded, Standardizer, NODE_DIM};
use super::gnn::Net;
use super::model::{HeadParams, TwoPhaseParams, PARAMS_VERSION};
use crate::error::{ensure, Error, Result};
use crate::workload::{GlobalFeatures, LayerGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            hidden: 64,
            seed: 42,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.batch_size > 0 && self.hidden > 0, || {
            "batch size and hidden width must be positive".into()
        })?;
        ensure(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            || format!("learning rate must be positive, got {}", self.learning_rate),
        )
    }
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Relative-error summary in energy space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
    /// Percentage of predictions within 10% of the truth.
    pub eb10: f64,
    pub n: usize,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    ensure(!truth.is_empty() && pred.len() == truth.len(), || {
        format!(
            "need matching non-empty slices, got {} and {}",
            pred.len(),
            truth.len()
        )
    })?;
    ensure(truth.iter().all(|&t| t > 0.0 && t.is_finite()), || {
        "truth values must be positive".into()
    })?;
    let mut sum_pct = 0.0;
    let mut within = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        let rel = (p - t).abs() / t;
        sum_pct += 100.0 * rel;
        if rel <= 0.10 {
            within += 1;
        }
    }
    let n = truth.len();
    Ok(Metrics {
        mape: sum_pct / n as f64,
        eb10: 100.0 * within as f64 / n as f64,
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prefill: Metrics,
    pub total: Metrics,
}

pub fn evaluate(dataset: &[GraphSample], params: &TwoPhaseParams) -> Result<EvalReport> {
    let preds = dataset
        .par_iter()
        .map(|s| params.predict_sample(s))
        .collect::<Result<Vec<_>>>()?;
    let (pp, pt): (Vec<f64>, Vec<f64>) = preds.into_iter().unzip();
    let tp: Vec<f64> = dataset.iter().map(|s| s.label_prefill).collect();
    let tt: Vec<f64> = dataset.iter().map(|s| s.label_total).collect();
    Ok(EvalReport {
        prefill: metrics(&pp, &tp)?,
        total: metrics(&pt, &tt)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub head: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mape: Option<f64>,
}

/// Input view and label of one head for one sample.
pub struct HeadExample<'a> {
    pub graph: &'a LayerGraph,
    pub globals: GlobalFeatures,
    pub target_j: f64,
}

fn prefill_examples(ds: &[GraphSample]) -> Vec<HeadExample<'_>> {
    ds.iter()
        .map(|s| HeadExample {
            graph: &s.prefill_graph,
            globals: s.prefill_globals.clone(),
            target_j: s.label_prefill,
        })
        .collect()
}

/// Teacher forcing: the total head sees the labelled prefill energy.
fn total_examples(ds: &[GraphSample]) -> Vec<HeadExample<'_>> {
    ds.iter()
        .map(|s| HeadExample {
            graph: &s.decode_graph,
            globals: s.total_globals.with_prefill_energy(s.label_prefill),
            target_j: s.label_total,
        })
        .collect()
}

fn single_phase_inputs(ds: &[GraphSample]) -> Vec<(LayerGraph, GlobalFeatures, f64)> {
    ds.iter()
        .map(|s| {
            (
                s.whole_request_graph(),
                s.whole_request_globals(),
                s.label_total,
            )
        })
        .collect()
}

fn as_examples(xs: &[(LayerGraph, GlobalFeatures, f64)]) -> Vec<HeadExample<'_>> {
    xs.iter()
        .map(|(g, gl, t)| HeadExample {
            graph: g,
            globals: gl.clone(),
            target_j: *t,
        })
        .collect()
}

fn loss_and_grad(net: &Net, e: &Encoded) -> Result<(f64, Vec<f64>)> {
    let c = net.forward(&e.graph, &e.globals)?;
    let r = c.y - e.target;
    let mut grad = vec![0.0; net.num_params()];
    net.backward(&e.graph, &c, 2.0 * r, &mut grad);
    Ok((r * r, grad))
}

/// Fits feature statistics on `train`, then trains a fresh network with
/// minibatch Adam on squared log-energy error.
pub fn train_head(
    name: &str,
    train: &[HeadExample<'_>],
    val: &[HeadExample<'_>],
    cfg: &TrainConfig,
    history: &mut Vec<EpochRecord>,
) -> Result<HeadParams> {
    cfg.validate()?;
    ensure(!train.is_empty(), || "training set is empty".into())?;
    let node_rows: Vec<Vec<f64>> = train
        .iter()
        .flat_map(|e| e.graph.nodes.iter().map(|n| node_numeric(n).to_vec()))
        .collect();
    let global_rows: Vec<Vec<f64>> = train.iter().map(|e| global_numeric(&e.globals)).collect();
    let node_norm = Standardizer::fit(node_rows.iter().map(Vec::as_slice))?;
    let global_norm = Standardizer::fit(global_rows.iter().map(Vec::as_slice))?;
    let mean_target = train.iter().map(|e| e.target_j.ln()).sum::<f64>() / train.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Net::new(
        NODE_DIM,
        cfg.hidden,
        global_norm.dim(),
        mean_target,
        &mut rng,
    );
    let mut head = HeadParams {
        node_norm,
        global_norm,
        net,
    };
    let enc = |xs: &[HeadExample<'_>]| -> Result<Vec<Encoded>> {
        xs.iter()
            .map(|e| head.encode_input(e.graph, &e.globals, Some(e.target_j)))
            .collect()
    };
    let train_enc = enc(train)?;
    let val_enc = enc(val)?;

    let mut adam = Adam::new(head.net.num_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let parts = batch
                .par_iter()
                .map(|&i| loss_and_grad(&head.net, &train_enc[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; head.net.num_params()];
            for (loss, g) in &parts {
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut head.net.params, &grad);
        }
        let train_loss = epoch_loss / train_enc.len() as f64;
        if !train_loss.is_finite() || head.net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged(format!(
                "{name} head loss became {train_loss} at epoch {epoch}"
            )));
        }
        let val_mape = if val_enc.is_empty() {
            None
        } else {
            Some(head_metrics(&head.net, &val_enc)?.mape)
        };
        history.push(EpochRecord {
            head: name.to_string(),
            epoch,
            train_loss,
            val_mape,
        });
    }
    Ok(head)
}

fn head_metrics(net: &Net, data: &[Encoded]) -> Result<Metrics> {
    let pred = data
        .par_iter()
        .map(|e| net.predict(&e.graph, &e.globals).map(f64::exp))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = data.iter().map(|e| e.target.exp()).collect();
    metrics(&pred, &truth)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub split: Split,
    pub history: Vec<EpochRecord>,
}

/// Trains on explicit train/validation sets: the prefill head first, then the
/// total head with teacher-forced prefill energies.
pub fn train_on(
    train: &[GraphSample],
    val: &[GraphSample],
    cfg: &TrainConfig,
) -> Result<(TwoPhaseParams, Vec<EpochRecord>)> {
    let mut history = Vec::new();
    let prefill = train_head(
        "prefill",
        &prefill_examples(train),
        &prefill_examples(val),
        cfg,
        &mut history,
    )?;
    let total_cfg = TrainConfig {
        seed: cfg.seed.wrapping_add(1),
        ..cfg.clone()
    };
    let total = train_head(
        "total",
        &total_examples(train),
        &total_examples(val),
        &total_cfg,
        &mut history,
    )?;
    Ok((
        TwoPhaseParams {
            version: PARAMS_VERSION,
            prefill,
            total,
        },
        history,
    ))
}

/// Splits `dataset` by seed and trains on the training part.
pub fn train(dataset: &[GraphSample], cfg: &TrainConfig) -> Result<(TwoPhaseParams, TrainReport)> {
    let split = split_indices(dataset.len(), cfg.train_frac, cfg.val_frac, cfg.seed)?;
    let (params, history) = train_on(
        &select(dataset, &split.train),
        &select(dataset, &split.val),
        cfg,
    )?;
    Ok((params, TrainReport { split, history }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Below this magnitude gradients are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Analytic gradient of the squared log error for one encoded example.
pub fn head_gradient(net: &Net, e: &Encoded) -> Result<Vec<f64>> {
    Ok(loss_and_grad(net, e)?.1)
}

fn check_head(net: &Net, e: &Encoded, indices: &[usize], step: f64) -> Result<f64> {
    let grad = head_gradient(net, e)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for &k in indices {
        let orig = probe.params[k];
        probe.params[k] = orig + step;
        let up = loss_and_grad_loss(&probe, e)?;
        probe.params[k] = orig - step;
        let dn = loss_and_grad_loss(&probe, e)?;
        probe.params[k] = orig;
        worst = worst.max(relative_error(grad[k], (up - dn) / (2.0 * step)));
    }
    Ok(worst)
}

fn loss_and_grad_loss(net: &Net, e: &Encoded) -> Result<f64> {
    let y = net.predict(&e.graph, &e.globals)?;
    Ok((y - e.target) * (y - e.target))
}

/// Compares analytic and central-difference gradients of the two-phase loss
/// on `sample` for `n_params` randomly chosen parameters split across both
/// heads.
pub fn grad_check(
    params: &TwoPhaseParams,
    sample: &GraphSample,
    step: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheck> {
    ensure(step > 0.0 && step.is_finite(), || {
        format!("step must be positive, got {step}")
    })?;
    let pre = params.prefill.encode_input(
        &sample.prefill_graph,
        &sample.prefill_globals,
        Some(sample.label_prefill),
    )?;
    let tot = params.total.encode_input(
        &sample.decode_graph,
        &sample
            .total_globals
            .with_prefill_energy(sample.label_prefill),
        Some(sample.label_total),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |n: usize, k: usize| -> Vec<usize> {
        (0..k.min(n)).map(|_| rng.random_range(0..n)).collect()
    };
    let half = n_params.div_ceil(2);
    let ip = pick(params.prefill.net.num_params(), half);
    let it = pick(params.total.net.num_params(), n_params - half);
    let worst = check_head(&params.prefill.net, &pre, &ip, step)?.max(check_head(
        &params.total.net,
        &tot,
        &it,
        step,
    )?);
    Ok(GradCheck {
        checked: ip.len() + it.len(),
        max_rel_err: worst,
    })
}

/// Ridge regression on standardized log-scaled global features, predicting
/// log total energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeRegressor {
    pub norm: Standardizer,
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

fn ridge_features(s: &GraphSample) -> Vec<f64> {
    let mut v = global_numeric(&s.prefill_globals);
    v.extend(global_numeric(&s.total_globals));
    v
}

impl RidgeRegressor {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Self> {
        ensure(!rows.is_empty() && rows.len() == y.len(), || {
            "ridge needs matching rows and targets".into()
        })?;
        let norm = Standardizer::fit(rows.iter().map(Vec::as_slice))?;
        let d = norm.dim();
        let x = DMatrix::from_fn(rows.len(), d, |i, j| norm.apply(&rows[i])[j]);
        let intercept = y.iter().sum::<f64>() / y.len() as f64;
        let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - intercept));
        let a = x.transpose() * &x + DMatrix::identity(d, d) * lambda * rows.len() as f64;
        let b = x.transpose() * yc;
        let coef = a
            .cholesky()
            .ok_or_else(|| Error::Fit("ridge normal equations are not positive definite".into()))?
            .solve(&b);
        Ok(Self {
            norm,
            coef: coef.iter().copied().collect(),
            intercept,
            lambda,
        })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .norm
                .apply(row)
                .iter()
                .zip(&self.coef)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn predict_sample(&self, s: &GraphSample) -> f64 {
        self.predict(&ridge_features(s)).exp()
    }
}

pub const RIDGE_LAMBDA: f64 = 1e-4;

/// Baseline that sees only request-level features.
pub fn baseline_global_regressor(
    train: &[GraphSample],
    test: &[GraphSample],
) -> Result<(RidgeRegressor, Metrics)> {
    let rows: Vec<Vec<f64>> = train.iter().map(ridge_features).collect();
    let y: Vec<f64> = train.iter().map(|s| s.label_total.ln()).collect();
    let model = RidgeRegressor::fit(&rows, &y, RIDGE_LAMBDA)?;
    let pred: Vec<f64> = test.iter().map(|s| model.predict_sample(s)).collect();
    let truth: Vec<f64> = test.iter().map(|s| s.label_total).collect();
    let m = metrics(&pred, &truth)?;
    Ok((model, m))
}

/// Baseline GNN that maps a lumped whole-request graph straight to total
/// energy without separating the phases.
pub fn baseline_single_phase(
    train: &[GraphSample],
    val: &[GraphSample],
    test: &[GraphSample],
    cfg: &TrainConfig,
) -> Result<(HeadParams, Metrics)> {
    let mut history = Vec::new();
    let (tr, va) = (single_phase_inputs(train), single_phase_inputs(val));
    let head = train_head(
        "single",
        &as_examples(&tr),
        &as_examples(&va),
        cfg,
        &mut history,
    )?;
    let pred = test
        .par_iter()
        .map(|s| head.predict(&s.whole_request_graph(), &s.whole_request_globals()))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = test.iter().map(|s| s.label_total).collect();
    let m = metrics(&pred, &truth)?;
    Ok((head, m))
}
