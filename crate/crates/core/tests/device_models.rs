use edge_carbon::assets::{reference_models, reference_samples};
use edge_carbon::device_models::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn params_close(fitted: &PeripheralModel, truth: &PeripheralModel, tol: f64) -> Result<(), String> {
    for ((k, a), (_, b)) in fitted.params().into_iter().zip(truth.params()) {
        if rel(a, b) > tol {
            return Err(format!("{k}: fitted {a} vs true {b} (rel {})", rel(a, b)));
        }
    }
    Ok(())
}

/// Multiplicative Gaussian noise on every observation.
fn noisy(samples: &[MeasurementSample], sigma: f64, seed: u64) -> Vec<MeasurementSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    samples
        .iter()
        .map(|s| MeasurementSample {
            observed: s.observed * (1.0 + n.sample(&mut rng)),
            ..*s
        })
        .collect()
}

/// `n` samples cycling through the noiseless sweep of `model`.
fn sweep(model: &PeripheralModel, n: usize) -> Vec<MeasurementSample> {
    let base = reference_samples(model);
    (0..n).map(|i| base[i % base.len()]).collect()
}

#[test]
fn bundled_sweeps_recover_generating_parameters() {
    for (name, model) in reference_models() {
        let r = fit(model.kind(), &reference_samples(&model)).unwrap();
        let tol = if model.kind() == ModelKind::Speaker {
            1e-6
        } else {
            1e-9
        };
        params_close(&r.model, &model, tol).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn noisy_fits_within_five_percent() {
    for (name, model) in reference_models() {
        let samples = noisy(&sweep(&model, 200), 0.05, 42);
        let r = fit(model.kind(), &samples).unwrap();
        params_close(&r.model, &model, 0.05).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn fitted_models_amortize_with_rate() {
    for (name, model) in reference_models() {
        let r = fit(model.kind(), &reference_samples(&model)).unwrap();
        let per_unit = |rate: f64| -> f64 {
            match r.model {
                PeripheralModel::Net(m) | PeripheralModel::Camera(m) | PeripheralModel::Mic(m) => {
                    m.energy_per_unit(10.0, rate * 10.0).unwrap()
                }
                PeripheralModel::Video(m) => m.power(rate).unwrap() / rate,
                _ => f64::NAN,
            }
        };
        if per_unit(1.0).is_nan() {
            continue;
        }
        let rates = [1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e8];
        for w in rates.windows(2) {
            assert!(per_unit(w[1]) < per_unit(w[0]), "{name} at {:?}", w);
        }
    }
}

#[test]
fn fit_on_bundled_csv_files() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/v1/samples");
    for (name, model) in reference_models() {
        let f = std::fs::File::open(dir.join(format!("{name}.csv"))).unwrap();
        let samples = read_samples_csv(f).unwrap();
        let r = fit(model.kind(), &samples).unwrap();
        let tol = if model.kind() == ModelKind::Speaker {
            1e-6
        } else {
            1e-9
        };
        params_close(&r.model, &model, tol).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

fn linear_samples(p: f64, e: f64, rates: &[f64]) -> Vec<MeasurementSample> {
    let mut v = Vec::new();
    for t in [1.0, 3.0, 7.0] {
        for &r in rates {
            v.push(MeasurementSample::energy(r * t, t, p * t + e * r * t));
        }
    }
    v
}

proptest! {
    #[test]
    fn linear_rate_noiseless_recovery(p in 0.01f64..5.0, e in 1e-9f64..1e-1, held_t in 0.5f64..20.0) {
        let samples = linear_samples(p, e, &[1.0, 10.0, 100.0, 1000.0]);
        let r = fit_linear_rate(&samples).unwrap();
        prop_assert!(rel(r.model.static_power, p) < 1e-9);
        prop_assert!(rel(r.model.marginal_energy, e) < 1e-9);
        // Re-evaluated at a held-out point.
        let n = 37.0 * held_t;
        let truth = p * held_t + e * n;
        prop_assert!((net_energy(&r.model, held_t, n).unwrap() - truth).abs() <= 1e-9 * truth.max(1.0));
    }

    #[test]
    fn video_noiseless_recovery(ps in 0.01f64..3.0, pp in 1e-9f64..1e-5) {
        let samples: Vec<_> = [1e4, 1e5, 3e5, 1e6, 2e6]
            .into_iter()
            .map(|px| MeasurementSample::power(px, ps + pp * px))
            .collect();
        let r = fit_video(&samples).unwrap();
        prop_assert!(rel(r.model.static_power, ps) < 1e-9);
        prop_assert!(rel(r.model.per_pixel_power, pp) < 1e-9);
    }

    #[test]
    fn display_noiseless_recovery(a in 1.0f64..8.0, b in -1e-2f64..-1e-4, c in 1e-7f64..1e-4) {
        let truth = DisplayPowerModel { a, b, c };
        prop_assume!(truth.min_power() > 0.0);
        let samples: Vec<_> = (0..=17)
            .map(|i| {
                let g = 15.0 * i as f64;
                MeasurementSample::power(g, a + b * g + c * g * g)
            })
            .collect();
        let r = fit_display(&samples).unwrap();
        prop_assert!(rel(r.model.a, a) < 1e-9);
        prop_assert!(rel(r.model.b, b) < 1e-9);
        prop_assert!(rel(r.model.c, c) < 1e-9);
    }

    #[test]
    fn speaker_noiseless_recovery(alpha in -0.08f64..-0.01, beta in 0.05f64..2.0) {
        let truth = SpeakerPowerModel { alpha, beta };
        let samples: Vec<_> = (0..30)
            .map(|i| {
                let v = 100.0 * i as f64 / 29.0;
                MeasurementSample::power(v, truth.power(v).unwrap())
            })
            .collect();
        let r = fit_speaker(&samples).unwrap();
        prop_assert!(rel(r.model.alpha, alpha) < 1e-6, "{} vs {}", r.model.alpha, alpha);
        prop_assert!(rel(r.model.beta, beta) < 1e-6, "{} vs {}", r.model.beta, beta);
    }

    #[test]
    fn linear_energy_is_monotone_in_count(p in 0.0f64..5.0, e in 0.0f64..1.0, t in 0.0f64..100.0, n in 0.0f64..1e6, dn in 0.0f64..1e6) {
        let m = LinearRateModel::new(p, e).unwrap();
        prop_assert!(m.energy(t, n + dn).unwrap() >= m.energy(t, n).unwrap());
    }
}
