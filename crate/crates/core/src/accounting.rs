//! Operational carbon, application pipelines and operational-vs-embodied
//! break-even analysis.

use serde::{Deserialize, Serialize};

use crate::device_models::{
    background_energy, camera_energy, mic_energy, ConversionTask, DisplayPowerModel, FitReport,
    LinearRateModel, PeripheralModel, SpeakerPowerModel, VideoPowerModel,
};
use crate::embodied::{soc_embodied, SocBom};
use crate::error::{ensure, non_negative, Error, Result};
use crate::workload::{DeviceSpec, LlmConfig, Request};

pub const JOULES_PER_KWH: f64 = 3.6e6;
pub const DAYS_PER_YEAR: f64 = 365.0;
pub const DEFAULT_LIFESPAN_YEARS: f64 = 5.0;

/// Grid carbon intensity in kgCO2/kWh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarbonIntensity {
    pub value: f64,
    pub region: String,
}

impl CarbonIntensity {
    pub fn new(value: f64, region: &str) -> Result<Self> {
        ensure(value > 0.0 && value.is_finite(), || {
            format!("carbon intensity for {region} must be positive, got {value}")
        })?;
        Ok(Self {
            value,
            region: region.to_string(),
        })
    }
}

/// kgCO2 emitted by consuming `energy_j` joules on grid `ci`.
pub fn operational_carbon(energy_j: f64, ci: &CarbonIntensity) -> Result<f64> {
    non_negative("energy", energy_j)?;
    Ok(energy_j / JOULES_PER_KWH * ci.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputStage {
    Mic { duration_s: f64, samples: f64 },
    Camera { duration_s: f64, frames: f64 },
}

impl InputStage {
    pub fn duration(&self) -> f64 {
        match self {
            InputStage::Mic { duration_s, .. } | InputStage::Camera { duration_s, .. } => {
                *duration_s
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionStage {
    pub task: ConversionTask,
    pub energy_j: f64,
    #[serde(default)]
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmStage {
    pub config: LlmConfig,
    pub request: Request,
    pub device: DeviceSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputStage {
    /// Panel at a uniform grey level, driven by the SoC's video output.
    Display {
        duration_s: f64,
        grey: f64,
        pixels: f64,
    },
    Speaker {
        duration_s: f64,
        volume: f64,
    },
}

impl OutputStage {
    pub fn duration(&self) -> f64 {
        match self {
            OutputStage::Display { duration_s, .. } | OutputStage::Speaker { duration_s, .. } => {
                *duration_s
            }
        }
    }
}

/// Input -> conversion(s) -> LLM -> output, plus idle background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppPipeline {
    pub name: String,
    pub input: InputStage,
    #[serde(default)]
    pub conversions: Vec<ConversionStage>,
    pub llm: LlmStage,
    pub output: OutputStage,
    /// Wall-clock span of one request; defaults to the sum of stage durations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_duration_s: Option<f64>,
}

/// Fitted peripheral models available to pipelines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeripheralModels {
    pub mic: Option<LinearRateModel>,
    pub camera: Option<LinearRateModel>,
    pub video: Option<VideoPowerModel>,
    pub speaker: Option<SpeakerPowerModel>,
    pub display: Option<DisplayPowerModel>,
}

impl PeripheralModels {
    /// Collects models from fit reports; network models are not used by pipelines.
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a FitReport>) -> Self {
        let mut m = Self::default();
        for r in reports {
            match r.model {
                PeripheralModel::Mic(x) => m.mic = Some(x),
                PeripheralModel::Camera(x) => m.camera = Some(x),
                PeripheralModel::Video(x) => m.video = Some(x),
                PeripheralModel::Speaker(x) => m.speaker = Some(x),
                PeripheralModel::Display(x) => m.display = Some(x),
                PeripheralModel::Net(_) => {}
            }
        }
        m
    }
}

fn require<T: Copy>(m: Option<T>, what: &str) -> Result<T> {
    m.ok_or_else(|| Error::Config(format!("pipeline needs a fitted {what} model")))
}

/// Energy of one LLM request plus its latency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmEstimate {
    pub prefill_j: f64,
    pub total_j: f64,
    pub latency_s: f64,
}

/// Anything that can price an LLM request on a device.
pub trait LlmEnergyEstimator {
    fn estimate(&self, cfg: &LlmConfig, req: &Request, dev: &DeviceSpec) -> Result<LlmEstimate>;
}

/// Per-stage energy of one pipeline run, in joules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub pipeline: String,
    pub input: f64,
    pub con: f64,
    pub llm: f64,
    pub output: f64,
    pub sys: f64,
    pub total: f64,
    pub duration_s: f64,
}

impl EnergyBreakdown {
    pub const KEYS: [&'static str; 5] = ["input", "con", "llm", "output", "sys"];

    pub fn stages(&self) -> [(&'static str, f64); 5] {
        [
            ("input", self.input),
            ("con", self.con),
            ("llm", self.llm),
            ("output", self.output),
            ("sys", self.sys),
        ]
    }

    pub fn share(&self, key: &str) -> f64 {
        self.stages()
            .iter()
            .find(|(k, _)| *k == key)
            .map_or(0.0, |(_, v)| v / self.total)
    }
}

pub fn app_energy(
    p: &AppPipeline,
    models: &PeripheralModels,
    llm: &dyn LlmEnergyEstimator,
) -> Result<EnergyBreakdown> {
    let input = match &p.input {
        InputStage::Mic {
            duration_s,
            samples,
        } => mic_energy(&require(models.mic, "mic")?, *duration_s, *samples)?,
        InputStage::Camera { duration_s, frames } => {
            camera_energy(&require(models.camera, "camera")?, *duration_s, *frames)?
        }
    };
    let mut con = 0.0;
    let mut con_time = 0.0;
    for c in &p.conversions {
        non_negative("conversion energy", c.energy_j)?;
        non_negative("conversion duration", c.duration_s)?;
        con += c.energy_j;
        con_time += c.duration_s;
    }
    p.llm.device.validate()?;
    let est = llm.estimate(&p.llm.config, &p.llm.request, &p.llm.device)?;
    let output = match &p.output {
        OutputStage::Display {
            duration_s,
            grey,
            pixels,
        } => {
            non_negative("display duration", *duration_s)?;
            let panel = require(models.display, "display")?.power(*grey)?;
            let video = require(models.video, "video")?.power(*pixels)?;
            (panel + video) * duration_s
        }
        OutputStage::Speaker { duration_s, volume } => {
            non_negative("speaker duration", *duration_s)?;
            require(models.speaker, "speaker")?.power(*volume)? * duration_s
        }
    };
    let stage_sum = p.input.duration() + con_time + est.latency_s + p.output.duration();
    let duration = match p.total_duration_s {
        Some(t) => {
            let longest = [
                p.input.duration(),
                con_time,
                est.latency_s,
                p.output.duration(),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            ensure(t >= longest, || {
                format!("total duration {t} s is shorter than the longest stage ({longest} s)")
            })?;
            t
        }
        None => stage_sum,
    };
    let sys = background_energy(p.llm.device.idle_power, duration)?;
    let llm_j = est.total_j;
    Ok(EnergyBreakdown {
        pipeline: p.name.clone(),
        input,
        con,
        llm: llm_j,
        output,
        sys,
        total: input + con + llm_j + output + sys,
        duration_s: duration,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageProfile {
    pub requests_per_day: f64,
    pub lifespan_years: f64,
}

impl UsageProfile {
    pub fn new(requests_per_day: f64) -> Self {
        Self {
            requests_per_day,
            lifespan_years: DEFAULT_LIFESPAN_YEARS,
        }
    }

    pub fn lifetime_requests(&self) -> f64 {
        self.requests_per_day * DAYS_PER_YEAR * self.lifespan_years
    }
}

/// Daily requests at which device B's per-request energy savings offset its
/// extra embodied carbon over the lifespan.
pub fn breakeven_requests(
    delta_embodied_kg: f64,
    delta_energy_per_request_j: f64,
    ci: &CarbonIntensity,
    lifespan_years: f64,
) -> Result<f64> {
    ensure(lifespan_years > 0.0, || "lifespan must be positive".into())?;
    if !(delta_energy_per_request_j > 0.0) {
        return Err(Error::NoBreakEven(format!(
            "device saves {delta_energy_per_request_j} J per request; savings must be positive"
        )));
    }
    if !(delta_embodied_kg >= 0.0) {
        return Err(Error::NoBreakEven(format!(
            "embodied delta {delta_embodied_kg} kg is negative; the saving device is also cheaper to build"
        )));
    }
    let per_request = operational_carbon(delta_energy_per_request_j, ci)?;
    Ok(delta_embodied_kg / (per_request * DAYS_PER_YEAR * lifespan_years))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub operational_kg: f64,
    pub embodied_kg: f64,
    pub total_kg: f64,
}

pub fn total_footprint(
    bom: &SocBom,
    usage: &UsageProfile,
    per_request_energy_j: f64,
    ci: &CarbonIntensity,
) -> Result<Footprint> {
    non_negative("requests_per_day", usage.requests_per_day)?;
    ensure(usage.lifespan_years > 0.0, || {
        "lifespan must be positive".into()
    })?;
    let embodied = soc_embodied(bom)?.total;
    let operational = operational_carbon(per_request_energy_j, ci)? * usage.lifetime_requests();
    Ok(Footprint {
        operational_kg: operational,
        embodied_kg: embodied,
        total_kg: operational + embodied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ci(v: f64) -> CarbonIntensity {
        CarbonIntensity::new(v, "test").unwrap()
    }

    #[test]
    fn operational_carbon_unit_conversion() {
        assert_eq!(operational_carbon(3.6e6, &ci(1.0)).unwrap(), 1.0);
        assert_eq!(operational_carbon(0.0, &ci(0.7)).unwrap(), 0.0);
        assert!((operational_carbon(7.2e6, &ci(0.48)).unwrap() - 0.96).abs() < 1e-12);
        assert!(CarbonIntensity::new(0.0, "x").is_err());
    }

    #[test]
    fn breakeven_direct_arithmetic() {
        let r = breakeven_requests(11.15, 1000.0, &ci(0.48), 5.0).unwrap();
        let oracle = 11.15 / (1000.0 / 3.6e6 * 0.48) / 1825.0;
        assert!((r - oracle).abs() <= 1e-9 * oracle);
        assert!((r - 45.8).abs() < 0.05);
        let half = breakeven_requests(11.15, 1000.0, &ci(0.24), 5.0).unwrap();
        assert!((half - 2.0 * r).abs() <= 1e-9 * r);
    }

    #[test]
    fn breakeven_requires_savings() {
        assert!(matches!(
            breakeven_requests(1.0, 0.0, &ci(0.5), 5.0),
            Err(Error::NoBreakEven(_))
        ));
        assert!(matches!(
            breakeven_requests(1.0, -3.0, &ci(0.5), 5.0),
            Err(Error::NoBreakEven(_))
        ));
        assert!(matches!(
            breakeven_requests(-1.0, 3.0, &ci(0.5), 5.0),
            Err(Error::NoBreakEven(_))
        ));
    }

    #[test]
    fn footprint_linear_in_usage() {
        let bom = crate::assets::bom("rk3588").unwrap();
        let zero = total_footprint(&bom, &UsageProfile::new(0.0), 500.0, &ci(0.48)).unwrap();
        assert_eq!(zero.operational_kg, 0.0);
        assert_eq!(zero.total_kg, zero.embodied_kg);
        let one = total_footprint(&bom, &UsageProfile::new(10.0), 500.0, &ci(0.48)).unwrap();
        let two = total_footprint(&bom, &UsageProfile::new(20.0), 500.0, &ci(0.48)).unwrap();
        assert!(
            (two.operational_kg - 2.0 * one.operational_kg).abs() <= 1e-12 * two.operational_kg
        );
        let long = total_footprint(
            &bom,
            &UsageProfile {
                requests_per_day: 10.0,
                lifespan_years: 10.0,
            },
            500.0,
            &ci(0.48),
        )
        .unwrap();
        assert!(
            (long.operational_kg - 2.0 * one.operational_kg).abs() <= 1e-12 * long.operational_kg
        );
    }

    struct Fixed(f64);
    impl LlmEnergyEstimator for Fixed {
        fn estimate(&self, _: &LlmConfig, _: &Request, _: &DeviceSpec) -> Result<LlmEstimate> {
            Ok(LlmEstimate {
                prefill_j: self.0 / 2.0,
                total_j: self.0,
                latency_s: 2.0,
            })
        }
    }

    #[test]
    fn missing_model_is_config_error() {
        let p = crate::assets::demo_pipelines("rk3588", 128)
            .unwrap()
            .remove(0);
        let err = app_energy(&p, &PeripheralModels::default(), &Fixed(5.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn breakdown_sums_and_background() {
        let models = PeripheralModels {
            mic: Some(LinearRateModel::new(0.1, 1e-6).unwrap()),
            camera: None,
            video: Some(VideoPowerModel::new(0.2, 0.0).unwrap()),
            speaker: None,
            display: Some(DisplayPowerModel {
                a: 1.0,
                b: 0.0,
                c: 0.0,
            }),
        };
        let p = crate::assets::demo_pipelines("rk3588", 128)
            .unwrap()
            .remove(0);
        let b = app_energy(&p, &models, &Fixed(5.0)).unwrap();
        let sum: f64 = b.stages().iter().map(|(_, v)| v).sum();
        assert_eq!(b.total, sum);
        assert_eq!(b.llm, 5.0);
        // background = idle power x (input + conversions + llm + output)
        let dur = 420.0 + 10.0 + 2.0 + 480.0;
        assert_eq!(b.duration_s, dur);
        assert!((b.sys - p.llm.device.idle_power * dur).abs() < 1e-9);
        assert_eq!(b.output, 1.2 * 480.0);

        let mut fixed = p.clone();
        fixed.total_duration_s = Some(10.0);
        assert!(app_energy(&fixed, &models, &Fixed(5.0)).is_err());
    }
}
