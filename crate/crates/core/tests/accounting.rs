use edge_carbon::accounting::*;
use edge_carbon::assets;
use edge_carbon::device_models::{fit, FitReport};
use edge_carbon::embodied::{delta_embodied, SocBom};
use edge_carbon::error::Error;
use edge_carbon::predictor::RooflineOracle;
use proptest::prelude::*;

fn ci(v: f64) -> CarbonIntensity {
    CarbonIntensity::new(v, "test").unwrap()
}

fn models() -> PeripheralModels {
    let reports: Vec<FitReport> = assets::reference_models()
        .into_iter()
        .map(|(_, m)| fit(m.kind(), &assets::reference_samples(&m)).unwrap())
        .collect();
    PeripheralModels::from_reports(&reports)
}

fn demo(device: &str, variant: &str) -> AppPipeline {
    let name = format!("{device}-{variant}-d{}", assets::DEMO_OUTPUT_LEN);
    assets::demo_pipelines(device, assets::DEMO_OUTPUT_LEN)
        .unwrap()
        .into_iter()
        .find(|p| p.name == name)
        .unwrap()
}

/// Per-request energy of the same pipeline on the base and the alternative board.
fn rk_vs_orin() -> (SocBom, SocBom, f64, f64) {
    let m = models();
    let e = |d: &str| {
        app_energy(&demo(d, "mic-spk"), &m, &RooflineOracle)
            .unwrap()
            .total
    };
    (
        assets::bom("rk3588").unwrap(),
        assets::bom("agx_orin").unwrap(),
        e("rk3588"),
        e("agx_orin"),
    )
}

#[test]
fn operational_carbon_examples() {
    assert_eq!(operational_carbon(3.6e6, &ci(1.0)).unwrap(), 1.0);
    assert_eq!(operational_carbon(0.0, &ci(0.7)).unwrap(), 0.0);
    assert!((operational_carbon(7.2e6, &ci(0.48)).unwrap() - 0.96).abs() < 1e-12);
    assert!(CarbonIntensity::new(0.0, "x").is_err());
    assert!(operational_carbon(-1.0, &ci(0.5)).is_err());
}

#[test]
fn breakeven_worked_example() {
    let r = breakeven_requests(11.15, 1000.0, &ci(0.48), 5.0).unwrap();
    let oracle = 11.15 / (1000.0 / 3.6e6 * 0.48) / (365.0 * 5.0);
    assert!((r - oracle).abs() < 1e-9 * oracle);
    assert!((r - 45.8).abs() < 0.05, "{r}");
    let half = breakeven_requests(11.15, 1000.0, &ci(0.24), 5.0).unwrap();
    assert!((half - 2.0 * r).abs() < 1e-9 * r);
}

#[test]
fn no_breakeven_without_savings() {
    for saved in [0.0, -5.0] {
        let e = breakeven_requests(1.0, saved, &ci(0.5), 5.0).unwrap_err();
        assert!(matches!(e, Error::NoBreakEven(_)), "{e}");
    }
}

#[test]
fn regional_ordering() {
    let (rk, orin, e_rk, e_orin) = rk_vs_orin();
    assert!(e_orin < e_rk);
    let delta = delta_embodied(&rk, &orin).unwrap();
    let r = |region: &str| {
        breakeven_requests(
            delta,
            e_rk - e_orin,
            &assets::carbon_intensity(region).unwrap(),
            5.0,
        )
        .unwrap()
    };
    assert!(r("france") > r("global") && r("global") > r("india"));
}

#[test]
fn footprints_meet_at_breakeven() {
    let (rk, orin, e_rk, e_orin) = rk_vs_orin();
    let delta = delta_embodied(&rk, &orin).unwrap();
    for region in ["france", "global", "india"] {
        let c = assets::carbon_intensity(region).unwrap();
        let n = breakeven_requests(delta, e_rk - e_orin, &c, 5.0).unwrap();
        let at = |k: f64| {
            let u = UsageProfile::new(n * k);
            let a = total_footprint(&rk, &u, e_rk, &c).unwrap().total_kg;
            let b = total_footprint(&orin, &u, e_orin, &c).unwrap().total_kg;
            (a, b)
        };
        let (a, b) = at(1.0);
        assert!((a - b).abs() <= 1e-6 * a, "{region}: {a} vs {b}");
        let (a, b) = at(0.5);
        assert!(a < b, "{region}: below breakeven the cheaper board wins");
        let (a, b) = at(2.0);
        assert!(a > b, "{region}: above breakeven the efficient board wins");
    }
}

#[test]
fn zero_usage_is_embodied_only() {
    let rk = assets::bom("rk3588").unwrap();
    let f = total_footprint(&rk, &UsageProfile::new(0.0), 500.0, &ci(0.48)).unwrap();
    assert_eq!(f.operational_kg, 0.0);
    assert_eq!(f.total_kg, f.embodied_kg);
}

#[test]
fn breakdown_keys_and_sum() {
    let m = models();
    for d in assets::DEVICE_NAMES {
        for variant in ["mic-dis", "mic-spk", "cam-dis", "cam-spk"] {
            let b = app_energy(&demo(d, variant), &m, &RooflineOracle).unwrap();
            let keys: Vec<_> = b.stages().iter().map(|(k, _)| *k).collect();
            assert_eq!(keys, EnergyBreakdown::KEYS);
            let sum: f64 = b.stages().iter().map(|(_, v)| v).sum();
            assert!((sum - b.total).abs() <= 1e-9 * b.total);
            assert!(b.stages().iter().all(|(_, v)| *v >= 0.0));
        }
    }
}

#[test]
fn demo_pipeline_shape() {
    let m = models();
    for d in assets::DEVICE_NAMES {
        let e = |v: &str| app_energy(&demo(d, v), &m, &RooflineOracle).unwrap();
        let mic_dis = e("mic-dis");
        assert!(mic_dis.share("output") > 0.55, "{d}");
        assert!(e("mic-spk").total < 0.5 * mic_dis.total, "{d}");
        assert!(e("cam-dis").total < mic_dis.total, "{d}");
        assert!(e("cam-spk").total < e("mic-spk").total, "{d}");
    }
}

#[test]
fn missing_model_is_config_error() {
    let p = demo("rk3588", "mic-dis");
    let mut m = models();
    m.display = None;
    let e = app_energy(&p, &m, &RooflineOracle).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");
}

#[test]
fn total_duration_must_cover_longest_stage() {
    let mut p = demo("rk3588", "mic-dis");
    p.total_duration_s = Some(1.0);
    assert!(app_energy(&p, &models(), &RooflineOracle).is_err());
    p.total_duration_s = Some(1e4);
    let b = app_energy(&p, &models(), &RooflineOracle).unwrap();
    assert_eq!(b.duration_s, 1e4);
    assert!((b.sys - 1e4 * p.llm.device.idle_power).abs() < 1e-9);
}

proptest! {
    #[test]
    fn breakeven_monotonicity(
        delta in 0.1f64..50.0,
        saved in 1.0f64..1e5,
        c in 0.01f64..1.0,
        k in 1.01f64..10.0,
        life in 0.5f64..20.0,
    ) {
        let base = breakeven_requests(delta, saved, &ci(c), life).unwrap();
        prop_assert!(breakeven_requests(delta, saved, &ci(c * k), life).unwrap() < base);
        prop_assert!(breakeven_requests(delta, saved * k, &ci(c), life).unwrap() < base);
        prop_assert!(breakeven_requests(delta * k, saved, &ci(c), life).unwrap() > base);
    }

    #[test]
    fn operational_part_is_linear(
        rpd in 0.0f64..1e4,
        life in 0.5f64..20.0,
        e in 0.0f64..1e5,
        k in 0.0f64..10.0,
        c in 0.01f64..1.0,
    ) {
        let bom = assets::bom("rk3588").unwrap();
        let op = |r: f64, l: f64| {
            total_footprint(&bom, &UsageProfile { requests_per_day: r, lifespan_years: l }, e, &ci(c))
                .unwrap()
                .operational_kg
        };
        let base = op(rpd, life);
        let tol = 1e-9 * (k * base).max(1e-12);
        prop_assert!((op(k * rpd, life) - k * base).abs() <= tol);
        prop_assert!((op(rpd, k.max(1e-3) * life) - k.max(1e-3) * base).abs() <= 1e-9 * (k * base).max(1e-12) + 1e-12);
    }
}
