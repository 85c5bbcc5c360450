//! Bundled reference data and the on-disk asset tree.
//!
//! The in-code tables below are the source for the JSON/CSV files under
//! `assets/v1/`; `examples/write_assets.rs` regenerates that tree and a test
//! checks the two stay in sync.
//!
//! Device power figures and peripheral model parameters are illustrative
//! values chosen to be plausible for the hardware class, not measurements.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::accounting::{
    AppPipeline, CarbonIntensity, ConversionStage, InputStage, LlmStage, OutputStage,
};
use crate::device_models::{
    ConversionTask, DisplayPowerModel, LinearRateModel, MeasurementSample, PeripheralModel,
    SpeakerPowerModel, VideoPowerModel,
};
use crate::embodied::{BomMod, DieUnit, Peripheral, SocBom};
use crate::error::{Error, Result};
use crate::workload::{Accelerator, DeviceSpec, LlmConfig, Request};

/// Environment variable overriding the asset root directory.
pub const ASSETS_ENV: &str = "CO2METER_ASSETS";
pub const ASSET_VERSION: &str = "v1";

pub const DEVICE_NAMES: [&str; 4] = ["rk3588", "rk3568", "agx_orin", "orin_nx"];
pub const LLM_NAMES: [&str; 4] = ["q1.5", "int", "lam", "q2"];
pub const BOM_NAMES: [&str; 4] = ["rk3588", "rk3568", "agx_orin", "orin_nx"];

pub fn devices() -> Vec<DeviceSpec> {
    let dev = |name: &str, tops: f64, gbps: f64, idle: f64, active: f64, gb: f64, acc| DeviceSpec {
        name: name.into(),
        peak_ops: tops * 1e12,
        mem_bandwidth: gbps * 1e9,
        idle_power: idle,
        active_power: active,
        dram_capacity: gb * 1e9,
        accelerator: acc,
    };
    vec![
        dev("rk3588", 6.0, 51.2, 1.2, 5.5, 8.0, Accelerator::Npu),
        dev("rk3568", 1.0, 34.1, 0.9, 3.5, 8.0, Accelerator::Npu),
        dev("agx_orin", 275.0, 204.8, 1.0, 20.0, 32.0, Accelerator::Gpu),
        dev("orin_nx", 157.0, 102.4, 0.8, 15.0, 16.0, Accelerator::Gpu),
    ]
}

pub fn device(name: &str) -> Result<DeviceSpec> {
    devices()
        .into_iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown device `{name}`")))
}

pub fn llms() -> Vec<LlmConfig> {
    let llm = |name: &str, layers, hidden, heads, head_dim, ffn, vocab| LlmConfig {
        name: name.into(),
        num_layers: layers,
        hidden_dim: hidden,
        num_heads: heads,
        head_dim,
        ffn_dim: ffn,
        vocab_size: vocab,
        weight_bytes: 1,
        act_bytes: 2,
    };
    vec![
        llm("q1.5", 24, 1024, 16, 64, 2816, 151_936),
        llm("int", 24, 2048, 16, 128, 8192, 92_544),
        llm("lam", 22, 2048, 32, 64, 5632, 32_000),
        llm("q2", 28, 1536, 12, 128, 8960, 151_936),
    ]
}

pub fn llm(name: &str) -> Result<LlmConfig> {
    llms()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown LLM config `{name}`")))
}

pub fn boms() -> Vec<SocBom> {
    let unit = |name: &str, f: f64| DieUnit {
        name: name.into(),
        area_fraction: f,
    };
    const CPA_DIE: f64 = 1.2;
    const CPA_PCB: f64 = 0.071;
    vec![
        SocBom {
            name: "rk3588".into(),
            die_area_cm2: 0.89,
            cpa_die_kg_per_cm2: CPA_DIE,
            units: vec![unit("npu", 0.05)],
            pcb_area_cm2: 43.5,
            cpa_pcb_kg_per_cm2: CPA_PCB,
            dram_kg: 0.42,
            peripherals: vec![],
        },
        SocBom {
            name: "rk3568".into(),
            die_area_cm2: 0.94 / CPA_DIE,
            cpa_die_kg_per_cm2: CPA_DIE,
            units: vec![unit("npu", 0.03 / 0.94)],
            pcb_area_cm2: 2.84 / CPA_PCB,
            cpa_pcb_kg_per_cm2: CPA_PCB,
            dram_kg: 0.38,
            peripherals: vec![],
        },
        SocBom {
            name: "agx_orin".into(),
            die_area_cm2: 4.55,
            cpa_die_kg_per_cm2: CPA_DIE,
            units: vec![unit("gpu", 0.35)],
            pcb_area_cm2: 121.0,
            cpa_pcb_kg_per_cm2: CPA_PCB,
            dram_kg: 1.68,
            peripherals: vec![],
        },
        SocBom {
            name: "orin_nx".into(),
            die_area_cm2: 2.8 / CPA_DIE,
            cpa_die_kg_per_cm2: CPA_DIE,
            units: vec![unit("gpu", 0.81 / 2.8)],
            pcb_area_cm2: 6.4 / CPA_PCB,
            cpa_pcb_kg_per_cm2: CPA_PCB,
            dram_kg: 0.88,
            peripherals: vec![],
        },
    ]
}

pub fn bom(name: &str) -> Result<SocBom> {
    boms()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown BOM `{name}`")))
}

/// Components counted as serving LLM inference on each board.
pub fn llm_components(bom_name: &str) -> &'static [&'static str] {
    match bom_name {
        "agx_orin" | "orin_nx" => &["gpu", "dram"],
        _ => &["npu", "dram"],
    }
}

/// Embodied carbon of stand-alone peripherals, kgCO2-eq.
pub fn peripheral_embodied() -> Vec<Peripheral> {
    [
        ("camera", 1.43),
        ("microphone", 0.04),
        ("speaker", 0.08),
        ("lcd", 10.85),
    ]
    .into_iter()
    .map(|(n, kg)| Peripheral { name: n.into(), kg })
    .collect()
}

/// Named what-if scenarios: the modified device and the BOM modifications.
pub struct Scenario {
    pub name: &'static str,
    pub base_device: &'static str,
    pub base_bom: &'static str,
    pub compute_scale: f64,
    pub bandwidth_scale: f64,
    pub bom_mods: Vec<BomMod>,
}

pub fn scenarios() -> Vec<Scenario> {
    let orin_dram = bom("agx_orin").expect("bundled").dram_kg;
    vec![
        Scenario {
            name: "rk-mem",
            base_device: "rk3588",
            base_bom: "rk3588",
            compute_scale: 1.0,
            bandwidth_scale: 4.0,
            bom_mods: vec![BomMod::SetDram { kg: orin_dram }],
        },
        Scenario {
            name: "rk-npu",
            base_device: "rk3588",
            base_bom: "rk3588",
            compute_scale: 8.0,
            bandwidth_scale: 4.0,
            bom_mods: vec![
                BomMod::SetDram { kg: orin_dram },
                BomMod::ScaleUnit {
                    name: "npu".into(),
                    factor: 8.0,
                },
            ],
        },
    ]
}

pub fn scenario(name: &str) -> Result<Scenario> {
    scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown scenario `{name}`")))
}

pub fn carbon_intensities() -> BTreeMap<String, f64> {
    [("france", 0.1), ("global", 0.48), ("india", 0.7)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

pub fn carbon_intensity(region: &str) -> Result<CarbonIntensity> {
    let v = carbon_intensities()
        .get(region)
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("unknown region `{region}`")))?;
    CarbonIntensity::new(v, region)
}

/// Generating parameters of the bundled peripheral measurement files.
pub fn reference_models() -> Vec<(&'static str, PeripheralModel)> {
    let lin = |p, e| LinearRateModel {
        static_power: p,
        marginal_energy: e,
    };
    vec![
        ("wifi", PeripheralModel::Net(lin(0.35, 1.2e-8))),
        ("bluetooth", PeripheralModel::Net(lin(0.03, 9.0e-8))),
        ("camera", PeripheralModel::Camera(lin(0.9, 0.04))),
        ("mic", PeripheralModel::Mic(lin(0.05, 4.0e-6))),
        (
            "video",
            PeripheralModel::Video(VideoPowerModel {
                static_power: 0.25,
                per_pixel_power: 4.0e-7,
            }),
        ),
        (
            "speaker",
            PeripheralModel::Speaker(SpeakerPowerModel {
                alpha: -0.035,
                beta: 0.15,
            }),
        ),
        (
            "display",
            PeripheralModel::Display(DisplayPowerModel {
                a: 6.0,
                b: -4.2e-2,
                c: 8.2e-5,
            }),
        ),
    ]
}

/// Noiseless measurement sweep generated from a model's parameters.
pub fn reference_samples(model: &PeripheralModel) -> Vec<MeasurementSample> {
    let energy_sweep = |m: &LinearRateModel, rates: &[f64]| {
        let mut v = Vec::new();
        for &t in &[1.0, 2.0, 5.0, 10.0] {
            for &r in rates {
                let n = r * t;
                v.push(MeasurementSample::energy(
                    n,
                    t,
                    m.static_power * t + m.marginal_energy * n,
                ));
            }
        }
        v
    };
    match model {
        // Rates around the point where data energy equals static energy.
        PeripheralModel::Net(m) => {
            let pivot = m.static_power / m.marginal_energy;
            energy_sweep(m, &[0.1, 0.3, 1.0, 3.0, 10.0].map(|k| (k * pivot).round()))
        }
        PeripheralModel::Camera(m) => energy_sweep(m, &[1.0, 5.0, 10.0, 15.0, 30.0]),
        PeripheralModel::Mic(m) => energy_sweep(m, &[8_000.0, 16_000.0, 44_100.0, 48_000.0]),
        PeripheralModel::Video(m) => [
            320.0 * 240.0,
            640.0 * 480.0,
            800.0 * 480.0,
            1280.0 * 720.0,
            1920.0 * 1080.0,
        ]
        .into_iter()
        .map(|px| MeasurementSample::power(px, m.static_power + m.per_pixel_power * px))
        .collect(),
        PeripheralModel::Speaker(m) => (0..=20)
            .map(|i| {
                let v = 5.0 * i as f64;
                MeasurementSample::power(v, 1.0 / m.denominator(v))
            })
            .collect(),
        PeripheralModel::Display(m) => (0..=17)
            .map(|i| {
                let g = 15.0 * i as f64;
                MeasurementSample::power(g, m.a + m.b * g + m.c * g * g)
            })
            .collect(),
    }
}

/// Demo virtual-assistant pipelines on a device: `{mic,cam}-{dis,spk}`.
///
/// Stage durations and conversion costs are illustrative; they are chosen so
/// the display dominates the microphone/display configuration.
pub fn demo_pipelines(device_name: &str, output_len: u64) -> Result<Vec<AppPipeline>> {
    let dev = device(device_name)?;
    let cfg = llm("q1.5")?.for_device(&dev);
    let request = Request::new(1500, output_len)?;
    let mic = InputStage::Mic {
        duration_s: 420.0,
        samples: 420.0 * 16_000.0,
    };
    let cam = InputStage::Camera {
        duration_s: 3.0,
        frames: 3.0,
    };
    let stt = ConversionStage {
        task: ConversionTask::Stt,
        energy_j: 40.0,
        duration_s: 10.0,
    };
    let ocr = ConversionStage {
        task: ConversionTask::Ocr,
        energy_j: 15.0,
        duration_s: 3.0,
    };
    let tts = ConversionStage {
        task: ConversionTask::Tts,
        energy_j: 30.0,
        duration_s: 10.0,
    };
    let dis = OutputStage::Display {
        duration_s: 480.0,
        grey: 50.0,
        pixels: 800.0 * 480.0,
    };
    let spk = OutputStage::Speaker {
        duration_s: 480.0,
        volume: 40.0,
    };
    let mut out = Vec::new();
    for (in_name, input, conv) in [("mic", &mic, &stt), ("cam", &cam, &ocr)] {
        for (out_name, output) in [("dis", &dis), ("spk", &spk)] {
            let mut conversions = vec![conv.clone()];
            if out_name == "spk" {
                conversions.push(tts.clone());
            }
            out.push(AppPipeline {
                name: format!("{device_name}-{in_name}-{out_name}-d{output_len}"),
                input: input.clone(),
                conversions,
                llm: LlmStage {
                    config: cfg.clone(),
                    request,
                    device: dev.clone(),
                },
                output: output.clone(),
                total_duration_s: None,
            });
        }
    }
    Ok(out)
}

/// Dataset-generation grid: the three seen LLMs.
pub fn default_grid() -> Vec<LlmConfig> {
    llms().into_iter().filter(|c| c.name != "q2").collect()
}

/// Resolves the asset root: `CO2METER_ASSETS`, else `./assets`, else the
/// tree shipped with the source.
pub fn asset_root() -> PathBuf {
    if let Ok(p) = std::env::var(ASSETS_ENV) {
        return PathBuf::from(p);
    }
    let local = PathBuf::from("assets");
    if local.join(ASSET_VERSION).is_dir() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

/// Versioned asset directory under `root`.
pub fn versioned(root: &Path) -> PathBuf {
    root.join(ASSET_VERSION)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("{}: {e}", path.display()),
    })
}

/// Loads `<dir>/<name>.json` under the versioned root when `name_or_path`
/// is not an existing file.
pub fn load_named<T: DeserializeOwned>(root: &Path, dir: &str, name_or_path: &str) -> Result<T> {
    let direct = Path::new(name_or_path);
    if direct.is_file() {
        return read_json(direct);
    }
    let p = versioned(root)
        .join(dir)
        .join(format!("{name_or_path}.json"));
    if !p.is_file() {
        return Err(Error::InvalidInput(format!(
            "`{name_or_path}` is neither a file nor a bundled {dir} entry"
        )));
    }
    read_json(&p)
}

/// Generating model for a bundled reference file name.
pub fn reference_model(name: &str) -> Result<PeripheralModel> {
    reference_models()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::InvalidInput(format!("unknown reference model `{name}`")))
}

/// Output length of the bundled demo pipelines.
pub const DEMO_OUTPUT_LEN: u64 = 128;

fn pretty<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Every bundled file, keyed by its path relative to the versioned root.
pub fn render_tree() -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for d in devices() {
        files.insert(format!("devices/{}.json", d.name), pretty(&d)?);
    }
    files.insert("devices.json".into(), pretty(&devices())?);
    for c in llms() {
        files.insert(format!("llms/{}.json", c.name), pretty(&c)?);
    }
    files.insert("grid.json".into(), pretty(&default_grid())?);
    for b in boms() {
        files.insert(format!("boms/{}.json", b.name), pretty(&b)?);
    }
    files.insert("peripherals.json".into(), pretty(&peripheral_embodied())?);
    files.insert("ci.json".into(), pretty(&carbon_intensities())?);
    for (name, model) in reference_models() {
        let samples = reference_samples(&model);
        let mut csv = Vec::new();
        crate::device_models::write_samples_csv(&mut csv, &samples)?;
        files.insert(
            format!("samples/{name}.csv"),
            String::from_utf8(csv).map_err(|e| Error::InvalidInput(e.to_string()))?,
        );
        let report = crate::device_models::fit(model.kind(), &samples)?;
        files.insert(format!("models/{name}.json"), pretty(&report)?);
    }
    for d in DEVICE_NAMES {
        for p in demo_pipelines(d, DEMO_OUTPUT_LEN)? {
            files.insert(format!("pipelines/{}.json", p.name), pretty(&p)?);
        }
    }
    Ok(files)
}

/// Writes [`render_tree`] under `versioned(root)`.
pub fn write_tree(root: &Path) -> Result<usize> {
    let base = versioned(root);
    let files = render_tree()?;
    for (rel, content) in &files {
        let path = base.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, content)?;
    }
    Ok(files.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::{app_energy, PeripheralModels};
    use crate::device_models::FitReport;
    use crate::predictor::RooflineOracle;

    fn bundled_models() -> PeripheralModels {
        let reports: Vec<FitReport> = reference_models()
            .into_iter()
            .map(|(_, m)| crate::device_models::fit(m.kind(), &reference_samples(&m)).unwrap())
            .collect();
        PeripheralModels::from_reports(&reports)
    }

    #[test]
    fn shipped_tree_matches_tables() {
        let base = versioned(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets"));
        for (rel, content) in render_tree().unwrap() {
            let on_disk = std::fs::read_to_string(base.join(&rel))
                .unwrap_or_else(|e| panic!("{rel}: {e}; run `cargo run --example write_assets`"));
            assert_eq!(
                on_disk, content,
                "{rel} is stale; run `cargo run --example write_assets`"
            );
        }
    }

    #[test]
    fn demo_pipeline_shares() {
        let models = bundled_models();
        for d in DEVICE_NAMES {
            let ps = demo_pipelines(d, DEMO_OUTPUT_LEN).unwrap();
            let e: Vec<_> = ps
                .iter()
                .map(|p| app_energy(p, &models, &RooflineOracle).unwrap())
                .collect();
            // order: mic-dis, mic-spk, cam-dis, cam-spk
            assert!(e[0].share("output") > 0.55, "{d}: {}", e[0].share("output"));
            assert!(
                e[1].total < 0.5 * e[0].total,
                "{d}: {} vs {}",
                e[1].total,
                e[0].total
            );
            assert!(e[2].total < e[0].total && e[3].total < e[1].total);
        }
    }
}
