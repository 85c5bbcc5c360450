//! Peripheral energy and power models with least-squares fitting.
//!
//! Energy models (network, camera, microphone) share the affine form
//! `static_power * t + marginal_energy * count`. Power models cover video
//! signal generation (affine in pixels), the speaker (a two-parameter
//! sigmoid-like curve in volume) and the TFT display (quadratic in grey level).
//!
//! Fits are ordinary least squares on column-scaled designs, with
//! non-negativity enforced for physical parameters by enumerating active sets
//! (the problems have at most three unknowns). The speaker curve is fitted by
//! a coarse grid search followed by Levenberg-Marquardt refinement.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, non_negative, Error, Result};

/// Highest admissible grey level for the display model.
pub const MAX_GREY: f64 = 255.0;

/// Affine energy model: `static_power * t + marginal_energy * count`.
///
/// Used for networking (count = bits), camera (frames) and microphone
/// (samples). Bluetooth is this model at a fixed bandwidth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRateModel {
    /// W
    pub static_power: f64,
    /// J per unit
    pub marginal_energy: f64,
}

impl LinearRateModel {
    pub fn new(static_power: f64, marginal_energy: f64) -> Result<Self> {
        non_negative("static_power", static_power)?;
        non_negative("marginal_energy", marginal_energy)?;
        Ok(Self {
            static_power,
            marginal_energy,
        })
    }

    pub fn energy(&self, duration: f64, count: f64) -> Result<f64> {
        non_negative("duration", duration)?;
        non_negative("count", count)?;
        Ok(self.static_power * duration + self.marginal_energy * count)
    }

    /// Average energy per unit at a fixed duration.
    pub fn energy_per_unit(&self, duration: f64, count: f64) -> Result<f64> {
        ensure(count > 0.0, || {
            "count must be > 0 for a per-unit average".into()
        })?;
        Ok(self.energy(duration, count)? / count)
    }
}

/// Network transfer energy for `data_bits` bits over `t` seconds.
pub fn net_energy(m: &LinearRateModel, t: f64, data_bits: f64) -> Result<f64> {
    m.energy(t, data_bits)
}

/// Camera energy for `frames` frames captured over `t` seconds.
pub fn camera_energy(m: &LinearRateModel, t: f64, frames: f64) -> Result<f64> {
    m.energy(t, frames)
}

/// Microphone energy for `samples` audio samples over `t` seconds.
pub fn mic_energy(m: &LinearRateModel, t: f64, samples: f64) -> Result<f64> {
    m.energy(t, samples)
}

/// Multimedia-unit power while generating a video signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoPowerModel {
    /// W
    pub static_power: f64,
    /// W per pixel
    pub per_pixel_power: f64,
}

impl VideoPowerModel {
    pub fn new(static_power: f64, per_pixel_power: f64) -> Result<Self> {
        non_negative("static_power", static_power)?;
        non_negative("per_pixel_power", per_pixel_power)?;
        Ok(Self {
            static_power,
            per_pixel_power,
        })
    }

    pub fn power(&self, pixels: f64) -> Result<f64> {
        non_negative("pixels", pixels)?;
        Ok(self.static_power + self.per_pixel_power * pixels)
    }
}

pub fn video_power(m: &VideoPowerModel, pixels: f64) -> Result<f64> {
    m.power(pixels)
}

/// Speaker power `1 / (1 + exp(alpha * V) + beta)`.
///
/// Volume is on an abstract 0-100 scale. With `alpha < 0` the curve rises
/// with volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPowerModel {
    pub alpha: f64,
    pub beta: f64,
}

impl SpeakerPowerModel {
    pub fn denominator(&self, volume: f64) -> f64 {
        1.0 + (self.alpha * volume).exp() + self.beta
    }

    pub fn power(&self, volume: f64) -> Result<f64> {
        ensure(volume.is_finite(), || {
            format!("volume must be finite, got {volume}")
        })?;
        let d = self.denominator(volume);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!(
                "speaker denominator {d} is not positive at volume {volume}"
            )));
        }
        Ok(1.0 / d)
    }
}

pub fn speaker_power(m: &SpeakerPowerModel, volume: f64) -> Result<f64> {
    m.power(volume)
}

/// TFT panel power at a uniform grey level: `a + b*x + c*x^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayPowerModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl DisplayPowerModel {
    pub fn power(&self, grey: f64) -> Result<f64> {
        ensure((0.0..=MAX_GREY).contains(&grey), || {
            format!("grey level must lie in [0, 255], got {grey}")
        })?;
        Ok(self.a + self.b * grey + self.c * grey * grey)
    }

    /// Minimum predicted power over the admissible grey range.
    pub fn min_power(&self) -> f64 {
        let eval = |x: f64| self.a + self.b * x + self.c * x * x;
        let mut lo = eval(0.0).min(eval(MAX_GREY));
        if self.c != 0.0 {
            let vertex = -self.b / (2.0 * self.c);
            if (0.0..=MAX_GREY).contains(&vertex) {
                lo = lo.min(eval(vertex));
            }
        }
        lo
    }
}

pub fn display_power(m: &DisplayPowerModel, grey: f64) -> Result<f64> {
    m.power(grey)
}

/// SoC idle power times application run time.
pub fn background_energy(idle_power: f64, duration: f64) -> Result<f64> {
    non_negative("idle_power", idle_power)?;
    non_negative("duration", duration)?;
    Ok(idle_power * duration)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionTask {
    /// image to text
    Ocr,
    /// speech to text
    Stt,
    /// text to speech
    Tts,
}

/// Per-invocation energy of each media conversion task, in joules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionCosts {
    pub ocr: f64,
    pub stt: f64,
    pub tts: f64,
}

impl ConversionCosts {
    pub fn validate(&self) -> Result<()> {
        non_negative("ocr", self.ocr)?;
        non_negative("stt", self.stt)?;
        non_negative("tts", self.tts)
    }
}

pub fn conversion_energy(task: ConversionTask, costs: &ConversionCosts) -> Result<f64> {
    costs.validate()?;
    Ok(match task {
        ConversionTask::Ocr => costs.ocr,
        ConversionTask::Stt => costs.stt,
        ConversionTask::Tts => costs.tts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Energy,
    Power,
}

/// One pre-differenced (active minus idle) measurement.
///
/// `predictor` is the model's count or level argument: bits, frames,
/// samples, pixels, volume or grey level depending on the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub kind: SampleKind,
    pub predictor: f64,
    pub duration_s: f64,
    pub observed: f64,
}

impl MeasurementSample {
    pub fn energy(predictor: f64, duration_s: f64, observed: f64) -> Self {
        Self {
            kind: SampleKind::Energy,
            predictor,
            duration_s,
            observed,
        }
    }

    pub fn power(predictor: f64, observed: f64) -> Self {
        Self {
            kind: SampleKind::Power,
            predictor,
            duration_s: 0.0,
            observed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.predictor.is_finite(), || {
            "predictor must be finite".into()
        })?;
        non_negative("observed", self.observed)?;
        non_negative("duration_s", self.duration_s)?;
        if self.kind == SampleKind::Energy {
            ensure(self.duration_s > 0.0, || {
                "energy samples need a positive duration".into()
            })?;
        }
        Ok(())
    }
}

/// Reads measurement samples from CSV with header
/// `kind,predictor,duration_s,observed`.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<MeasurementSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let expected = ["kind", "predictor", "duration_s", "observed"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<MeasurementSample>().enumerate() {
        let line = i + 2;
        let sample = rec.map_err(|e| csv_error(e, line))?;
        sample.validate().map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_samples_csv<W: std::io::Write>(
    writer: W,
    samples: &[MeasurementSample],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in samples {
        wtr.serialize(s)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Net,
    Camera,
    Mic,
    Video,
    Speaker,
    Display,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Net,
        ModelKind::Camera,
        ModelKind::Mic,
        ModelKind::Video,
        ModelKind::Speaker,
        ModelKind::Display,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Net => "net",
            ModelKind::Camera => "camera",
            ModelKind::Mic => "mic",
            ModelKind::Video => "video",
            ModelKind::Speaker => "speaker",
            ModelKind::Display => "display",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model kind `{s}`")))
    }
}

/// Any fitted peripheral model; serializes as `{"model": <name>, "params": {...}}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum PeripheralModel {
    Net(LinearRateModel),
    Camera(LinearRateModel),
    Mic(LinearRateModel),
    Video(VideoPowerModel),
    Speaker(SpeakerPowerModel),
    Display(DisplayPowerModel),
}

impl PeripheralModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            PeripheralModel::Net(_) => ModelKind::Net,
            PeripheralModel::Camera(_) => ModelKind::Camera,
            PeripheralModel::Mic(_) => ModelKind::Mic,
            PeripheralModel::Video(_) => ModelKind::Video,
            PeripheralModel::Speaker(_) => ModelKind::Speaker,
            PeripheralModel::Display(_) => ModelKind::Display,
        }
    }

    /// Prediction for one sample's inputs (J for energy models, W for power models).
    pub fn predict(&self, predictor: f64, duration: f64) -> Result<f64> {
        match self {
            PeripheralModel::Net(m) | PeripheralModel::Camera(m) | PeripheralModel::Mic(m) => {
                m.energy(duration, predictor)
            }
            PeripheralModel::Video(m) => m.power(predictor),
            PeripheralModel::Speaker(m) => m.power(predictor),
            PeripheralModel::Display(m) => m.power(predictor),
        }
    }

    /// Parameters as ordered `(name, value)` pairs.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match self {
            PeripheralModel::Net(m) | PeripheralModel::Camera(m) | PeripheralModel::Mic(m) => vec![
                ("static_power", m.static_power),
                ("marginal_energy", m.marginal_energy),
            ],
            PeripheralModel::Video(m) => vec![
                ("static_power", m.static_power),
                ("per_pixel_power", m.per_pixel_power),
            ],
            PeripheralModel::Speaker(m) => vec![("alpha", m.alpha), ("beta", m.beta)],
            PeripheralModel::Display(m) => vec![("a", m.a), ("b", m.b), ("c", m.c)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport<M = PeripheralModel> {
    #[serde(flatten)]
    pub model: M,
    pub mae: f64,
    pub max_abs_err: f64,
    pub n_samples: usize,
}

impl<M> FitReport<M> {
    pub fn map<N>(self, f: impl FnOnce(M) -> N) -> FitReport<N> {
        FitReport {
            model: f(self.model),
            mae: self.mae,
            max_abs_err: self.max_abs_err,
            n_samples: self.n_samples,
        }
    }
}

/// Mean and max absolute error of `model` over `samples`.
pub fn residual_stats(
    model: &PeripheralModel,
    samples: &[MeasurementSample],
) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for s in samples {
        let err = (model.predict(s.predictor, s.duration_s)? - s.observed).abs();
        sum += err;
        max = max.max(err);
    }
    Ok((sum / samples.len() as f64, max))
}

fn report<M>(
    model: M,
    wrap: impl Fn(M) -> PeripheralModel,
    samples: &[MeasurementSample],
) -> Result<FitReport<M>>
where
    M: Copy,
{
    let (mae, max_abs_err) = residual_stats(&wrap(model), samples)?;
    Ok(FitReport {
        model,
        mae,
        max_abs_err,
        n_samples: samples.len(),
    })
}

fn check_samples(samples: &[MeasurementSample], kind: SampleKind, min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(Error::Fit(format!(
            "need at least {min} samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        s.validate()?;
        if s.kind != kind {
            return Err(Error::InvalidInput(format!(
                "expected {kind:?} samples, found {:?}",
                s.kind
            )));
        }
    }
    Ok(())
}

/// Least squares on a column-scaled design. Returns `None` for rank-deficient
/// designs.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if m < k || k == 0 {
        return None;
    }
    let mut scale = vec![0.0; k];
    for row in rows {
        for (s, v) in scale.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    for s in &mut scale {
        *s = s.sqrt();
        if *s == 0.0 {
            return None;
        }
    }
    let a = DMatrix::from_fn(m, k, |i, j| rows[i][j] / scale[j]);
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return None;
    }
    let x = svd.solve(&b, 0.0).ok()?;
    Some(x.iter().zip(&scale).map(|(v, s)| v / s).collect())
}

fn sse(rows: &[Vec<f64>], y: &[f64], coef: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(r, t)| {
            let p: f64 = r.iter().zip(coef).map(|(a, b)| a * b).sum();
            (p - t) * (p - t)
        })
        .sum()
}

/// Least squares with `coef[j] >= 0` wherever `nonneg[j]`.
///
/// Enumerates active sets, which is exact for the handful of unknowns the
/// peripheral models have.
fn constrained_least_squares(rows: &[Vec<f64>], y: &[f64], nonneg: &[bool]) -> Result<Vec<f64>> {
    let full = least_squares(rows, y)
        .ok_or_else(|| Error::Fit("design matrix is rank deficient".into()))?;
    if full.iter().zip(nonneg).all(|(c, nn)| !nn || *c >= 0.0) {
        return Ok(full);
    }
    let k = nonneg.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Each mask bit pins one constrained coefficient at zero.
    for mask in 1u32..(1 << k) {
        if (0..k).any(|j| mask & (1 << j) != 0 && !nonneg[j]) {
            continue;
        }
        let free: Vec<usize> = (0..k).filter(|j| mask & (1 << j) == 0).collect();
        let mut coef = vec![0.0; k];
        if !free.is_empty() {
            let sub: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| free.iter().map(|&j| r[j]).collect())
                .collect();
            let Some(x) = least_squares(&sub, y) else {
                continue;
            };
            for (&j, v) in free.iter().zip(x) {
                coef[j] = v;
            }
        }
        if coef.iter().zip(nonneg).any(|(c, nn)| *nn && *c < 0.0) {
            continue;
        }
        let err = sse(rows, y, &coef);
        if best.as_ref().is_none_or(|(b, _)| err < *b) {
            best = Some((err, coef));
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::Fit("no feasible non-negative solution".into()))
}

/// Scales each row and target by `1 / observed` so the fit minimizes
/// relative rather than absolute residuals. Meter noise is roughly
/// proportional to the reading, which makes this the efficient estimator.
/// Falls back to unit weights when any observation is not positive.
fn relative_weighting(rows: &mut [Vec<f64>], y: &mut [f64]) {
    if y.iter().any(|v| !(*v > 0.0)) {
        return;
    }
    for (row, t) in rows.iter_mut().zip(y.iter_mut()) {
        let w = 1.0 / *t;
        row.iter_mut().for_each(|v| *v *= w);
        *t = 1.0;
    }
}

/// Fits `static_power` and `marginal_energy` from energy samples where
/// `predictor` is the unit count.
pub fn fit_linear_rate(samples: &[MeasurementSample]) -> Result<FitReport<LinearRateModel>> {
    check_samples(samples, SampleKind::Energy, 2)?;
    let mut rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| vec![s.duration_s, s.predictor])
        .collect();
    let mut y: Vec<f64> = samples.iter().map(|s| s.observed).collect();
    relative_weighting(&mut rows, &mut y);
    let c = constrained_least_squares(&rows, &y, &[true, true])?;
    let model = LinearRateModel::new(c[0], c[1])?;
    report(model, PeripheralModel::Net, samples)
}

/// Fits the video model from power samples where `predictor` is the pixel count.
pub fn fit_video(samples: &[MeasurementSample]) -> Result<FitReport<VideoPowerModel>> {
    check_samples(samples, SampleKind::Power, 2)?;
    let mut rows: Vec<Vec<f64>> = samples.iter().map(|s| vec![1.0, s.predictor]).collect();
    let mut y: Vec<f64> = samples.iter().map(|s| s.observed).collect();
    relative_weighting(&mut rows, &mut y);
    let c = constrained_least_squares(&rows, &y, &[true, true])?;
    let model = VideoPowerModel::new(c[0], c[1])?;
    report(model, PeripheralModel::Video, samples)
}

/// Quadratic least squares of display power on grey level.
pub fn fit_display(samples: &[MeasurementSample]) -> Result<FitReport<DisplayPowerModel>> {
    check_samples(samples, SampleKind::Power, 3)?;
    for s in samples {
        ensure((0.0..=MAX_GREY).contains(&s.predictor), || {
            format!("grey level {} outside [0, 255]", s.predictor)
        })?;
    }
    if distinct_count(samples) < 3 {
        return Err(Error::Fit("need at least 3 distinct grey levels".into()));
    }
    let mut rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| vec![1.0, s.predictor, s.predictor * s.predictor])
        .collect();
    let mut y: Vec<f64> = samples.iter().map(|s| s.observed).collect();
    relative_weighting(&mut rows, &mut y);
    let c = least_squares(&rows, &y)
        .ok_or_else(|| Error::Fit("design matrix is rank deficient".into()))?;
    let model = DisplayPowerModel {
        a: c[0],
        b: c[1],
        c: c[2],
    };
    if !(model.min_power() > 0.0) {
        return Err(Error::Fit(format!(
            "fitted display curve is not positive on [0, 255] (min {})",
            model.min_power()
        )));
    }
    report(model, PeripheralModel::Display, samples)
}

fn distinct_count(samples: &[MeasurementSample]) -> usize {
    let mut v: Vec<f64> = samples.iter().map(|s| s.predictor).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Search grid and stopping rule for [`fit_speaker_with`].
#[derive(Clone, Debug)]
pub struct SpeakerFitOptions {
    /// Candidate values of `alpha * V_max`; divided by the largest sample
    /// volume so the grid adapts to the volume scale.
    pub alpha_scaled_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub max_iter: usize,
    pub step_tol: f64,
}

impl Default for SpeakerFitOptions {
    fn default() -> Self {
        Self {
            alpha_scaled_grid: linspace(-10.0, 10.0, 81),
            beta_grid: linspace(-0.95, 5.0, 120),
            max_iter: 200,
            step_tol: 1e-10,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn fit_speaker(samples: &[MeasurementSample]) -> Result<FitReport<SpeakerPowerModel>> {
    fit_speaker_with(samples, &SpeakerFitOptions::default())
}

/// Nonlinear least squares for the speaker curve: grid initialization, then
/// Levenberg-Marquardt.
pub fn fit_speaker_with(
    samples: &[MeasurementSample],
    opts: &SpeakerFitOptions,
) -> Result<FitReport<SpeakerPowerModel>> {
    check_samples(samples, SampleKind::Power, 2)?;
    if distinct_count(samples) < 2 {
        return Err(Error::Fit("need samples at 2 or more volumes".into()));
    }
    let vmax = samples
        .iter()
        .map(|s| s.predictor.abs())
        .fold(0.0f64, f64::max);
    let objective = |m: &SpeakerPowerModel| -> Option<f64> {
        let mut acc = 0.0;
        for s in samples {
            let d = m.denominator(s.predictor);
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let r = 1.0 / d - s.observed;
            acc += r * r;
        }
        Some(acc)
    };

    let mut grid_best: Option<(f64, SpeakerPowerModel)> = None;
    for &ka in &opts.alpha_scaled_grid {
        for &beta in &opts.beta_grid {
            let m = SpeakerPowerModel {
                alpha: ka / vmax,
                beta,
            };
            if let Some(f) = objective(&m) {
                if grid_best.as_ref().is_none_or(|(b, _)| f < *b) {
                    grid_best = Some((f, m));
                }
            }
        }
    }
    let (mut cur_sse, grid_model) = grid_best
        .ok_or_else(|| Error::Fit("every grid candidate has a non-positive denominator".into()))?;

    let mut p = grid_model;
    let mut lambda = 1e-3;
    for _ in 0..opts.max_iter {
        if cur_sse == 0.0 {
            break;
        }
        // Normal equations of the 2-parameter problem.
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in samples {
            let e = (p.alpha * s.predictor).exp();
            let d = 1.0 + e + p.beta;
            let r = 1.0 / d - s.observed;
            let inv_d2 = 1.0 / (d * d);
            let ja = -s.predictor * e * inv_d2;
            let jb = -inv_d2;
            a11 += ja * ja;
            a12 += ja * jb;
            a22 += jb * jb;
            g1 += ja * r;
            g2 += jb * r;
        }
        let mut accepted = None;
        while lambda < 1e16 {
            let d11 = a11 + lambda * a11.max(1e-12);
            let d22 = a22 + lambda * a22.max(1e-12);
            let det = d11 * d22 - a12 * a12;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let da = (-g1 * d22 + g2 * a12) / det;
            let db = (-g2 * d11 + g1 * a12) / det;
            let cand = SpeakerPowerModel {
                alpha: p.alpha + da,
                beta: p.beta + db,
            };
            match objective(&cand) {
                Some(f) if f < cur_sse => {
                    accepted = Some((cand, f, da.hypot(db)));
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        let Some((cand, f, step)) = accepted else {
            break;
        };
        p = cand;
        cur_sse = f;
        if step < opts.step_tol {
            break;
        }
    }

    let refined = report(p, PeripheralModel::Speaker, samples)?;
    let grid = report(grid_model, PeripheralModel::Speaker, samples)?;
    Ok(if refined.mae <= grid.mae {
        refined
    } else {
        grid
    })
}

/// Fits the model of the requested kind.
pub fn fit(kind: ModelKind, samples: &[MeasurementSample]) -> Result<FitReport> {
    Ok(match kind {
        ModelKind::Net => fit_linear_rate(samples)?.map(PeripheralModel::Net),
        ModelKind::Camera => fit_linear_rate(samples)?.map(PeripheralModel::Camera),
        ModelKind::Mic => fit_linear_rate(samples)?.map(PeripheralModel::Mic),
        ModelKind::Video => fit_video(samples)?.map(PeripheralModel::Video),
        ModelKind::Speaker => fit_speaker(samples)?.map(PeripheralModel::Speaker),
        ModelKind::Display => fit_display(samples)?.map(PeripheralModel::Display),
    })
}
