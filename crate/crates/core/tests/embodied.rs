use edge_carbon::assets;
use edge_carbon::embodied::*;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn report(name: &str) -> EmbodiedReport {
    soc_embodied(&assets::bom(name).unwrap()).unwrap()
}

#[test]
fn rk3588_components() {
    let r = report("rk3588");
    assert!(close(unit_embodied(0.89, 1.2).unwrap(), 1.068, 1e-12));
    assert!(close(r.component(PCB).unwrap(), 3.0885, 1e-12));
    assert!(close(r.die_total, 1.068, 1e-12));
    assert!(close(r.component("npu").unwrap(), 0.0534, 1e-12));
    assert!(close(r.total, 4.5765, 1e-9));
    let f = llm_fraction(&r, assets::llm_components("rk3588")).unwrap();
    assert!((10.2..=10.6).contains(&f), "{f}");
}

#[test]
fn agx_orin_components() {
    let r = report("agx_orin");
    assert!(close(r.component("gpu").unwrap(), 1.911, 1e-12));
    assert!(close(r.total, 15.731, 1e-9));
    let f = llm_fraction(&r, assets::llm_components("agx_orin")).unwrap();
    assert!(close(f, 22.8, 0.2), "{f}");
}

#[test]
fn small_boards_reproduce_printed_components() {
    let r = report("rk3568");
    assert!(close(r.component(PCB).unwrap(), 2.84, 1e-12));
    assert!(close(r.die_total, 0.94, 1e-12));
    assert!(close(r.component("npu").unwrap(), 0.03, 1e-12));
    assert!(close(r.component(DRAM).unwrap(), 0.38, 0.0));

    let r = report("orin_nx");
    assert!(close(r.component(PCB).unwrap(), 6.4, 1e-12));
    assert!(close(r.die_total, 2.8, 1e-12));
    assert!(close(r.component("gpu").unwrap(), 0.81, 1e-12));
    // The printed components give 16.8%, not the 15.4% quoted alongside them.
    let f = llm_fraction(&r, assets::llm_components("orin_nx")).unwrap();
    assert!(close(f, 100.0 * 1.69 / 10.08, 1e-9), "{f}");
}

#[test]
fn peripheral_table() {
    let p = assets::peripheral_embodied();
    let kg = |n: &str| p.iter().find(|x| x.name == n).unwrap().kg;
    assert_eq!(kg("camera"), 1.43);
    assert_eq!(kg("microphone"), 0.04);
    assert_eq!(kg("speaker"), 0.08);
    assert_eq!(kg("lcd"), 10.85);
}

#[test]
fn orin_to_rk3588_ratio_and_delta() {
    let rk = assets::bom("rk3588").unwrap();
    let orin = assets::bom("agx_orin").unwrap();
    let ratio = report("agx_orin").total / report("rk3588").total;
    assert!(close(ratio, 3.437, 0.01), "{ratio}");
    let d = delta_embodied(&rk, &orin).unwrap();
    assert!(close(d, 15.731 - 4.5765, 1e-9));
    assert_eq!(delta_embodied(&orin, &rk).unwrap(), -d);
    assert_eq!(delta_embodied(&rk, &rk).unwrap(), 0.0);
}

#[test]
fn whatif_scenarios() {
    let rk = assets::bom("rk3588").unwrap();
    let base = soc_embodied(&rk).unwrap().total;
    for (name, total, pct) in [("rk-mem", 5.8365, 27.5), ("rk-npu", 6.2103, 35.7)] {
        let sc = assets::scenario(name).unwrap();
        let b = whatif_bom(&rk, &sc.bom_mods).unwrap();
        let t = soc_embodied(&b).unwrap().total;
        assert!(close(t, total, 1e-4), "{name}: {t}");
        let inc = 100.0 * (t - base) / base;
        assert!(close(inc, pct, 0.2), "{name}: {inc}");
    }
    assert_eq!(whatif_bom(&rk, &[]).unwrap(), rk);
}

fn bom_strategy() -> impl Strategy<Value = SocBom> {
    (
        0.0f64..10.0,
        0.0f64..3.0,
        prop::collection::vec(0.0f64..1.0, 0..5),
        0.0f64..200.0,
        0.0f64..0.2,
        0.0f64..3.0,
        prop::collection::vec(0.0f64..15.0, 0..4),
    )
        .prop_map(|(die, cpa, raw, pcb, cpa_pcb, dram, periph)| {
            // Normalize fractions so they never exceed one.
            let sum: f64 = raw.iter().sum::<f64>().max(1.0);
            SocBom {
                name: "synthetic".into(),
                die_area_cm2: die,
                cpa_die_kg_per_cm2: cpa,
                units: raw
                    .iter()
                    .enumerate()
                    .map(|(i, f)| DieUnit {
                        name: format!("u{i}"),
                        area_fraction: f / sum,
                    })
                    .collect(),
                pcb_area_cm2: pcb,
                cpa_pcb_kg_per_cm2: cpa_pcb,
                dram_kg: dram,
                peripherals: periph
                    .iter()
                    .enumerate()
                    .map(|(i, kg)| Peripheral {
                        name: format!("p{i}"),
                        kg: *kg,
                    })
                    .collect(),
            }
        })
}

proptest! {
    #[test]
    fn total_is_sum_of_parts(b in bom_strategy()) {
        let r = soc_embodied(&b).unwrap();
        let assigned: f64 = b.units.iter().map(|u| u.area_fraction).sum();
        let mut expected = b.pcb_area_cm2 * b.cpa_pcb_kg_per_cm2 + b.dram_kg;
        for u in &b.units {
            expected += u.area_fraction * b.die_area_cm2 * b.cpa_die_kg_per_cm2;
        }
        expected += (1.0 - assigned).max(0.0) * b.die_area_cm2 * b.cpa_die_kg_per_cm2;
        expected += b.peripherals.iter().map(|p| p.kg).sum::<f64>();
        prop_assert!((r.total - expected).abs() <= 1e-9 * expected.max(1.0));
        let parts: f64 = r.per_component.iter().map(|c| c.kg).sum();
        prop_assert!((r.total - parts).abs() <= 1e-9 * parts.max(1.0));
    }

    #[test]
    fn scaling_everything_scales_total(b in bom_strategy(), k in 0.0f64..10.0) {
        let mut s = b.clone();
        s.die_area_cm2 *= k;
        s.pcb_area_cm2 *= k;
        s.dram_kg *= k;
        for p in &mut s.peripherals {
            p.kg *= k;
        }
        let t = soc_embodied(&b).unwrap().total;
        let ts = soc_embodied(&s).unwrap().total;
        prop_assert!((ts - k * t).abs() <= 1e-9 * (k * t).max(1.0));
    }

    #[test]
    fn refining_die_into_units_keeps_total(
        b in bom_strategy(),
        raw in prop::collection::vec(0.0f64..1.0, 1..6),
    ) {
        let chip = soc_embodied(&SocBom { units: vec![], ..b.clone() }).unwrap();
        let sum: f64 = raw.iter().sum::<f64>().max(1e-12);
        let units = raw
            .iter()
            .enumerate()
            .map(|(i, f)| DieUnit { name: format!("r{i}"), area_fraction: f / sum })
            .collect();
        let fine = soc_embodied(&SocBom { units, ..b }).unwrap();
        prop_assert!((fine.total - chip.total).abs() <= 1e-9 * chip.total.max(1.0));
        prop_assert!((fine.die_total - chip.die_total).abs() <= 1e-9 * chip.die_total.max(1.0));
    }

    #[test]
    fn delta_is_antisymmetric(a in bom_strategy(), b in bom_strategy()) {
        prop_assert_eq!(delta_embodied(&a, &b).unwrap(), -delta_embodied(&b, &a).unwrap());
    }

    #[test]
    fn fraction_in_range(b in bom_strategy()) {
        let r = soc_embodied(&b).unwrap();
        let names: Vec<&str> = r.per_component.iter().map(|c| c.name.as_str()).collect();
        let f = llm_fraction(&r, &names).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&f));
        prop_assert_eq!(llm_fraction(&r, &[]).unwrap(), 0.0);
    }
}
