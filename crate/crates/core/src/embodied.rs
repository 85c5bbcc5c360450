//! Unit-level embodied carbon of edge SoC boards.
//!
//! Silicon and PCB carbon follow `area * CPA`. The die is partitioned into
//! named units by area fraction; whatever the named units do not cover is
//! reported as `other`, so the die total always equals the chip-level value.
//! DRAM and peripherals carry fixed kgCO2-eq figures.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, non_negative, Error, Result};

/// Name of the implicit unit that absorbs unassigned die area.
pub const OTHER_UNIT: &str = "other";
pub const PCB: &str = "pcb";
pub const DRAM: &str = "dram";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DieUnit {
    pub name: String,
    pub area_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peripheral {
    pub name: String,
    pub kg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocBom {
    pub name: String,
    pub die_area_cm2: f64,
    pub cpa_die_kg_per_cm2: f64,
    #[serde(default)]
    pub units: Vec<DieUnit>,
    pub pcb_area_cm2: f64,
    pub cpa_pcb_kg_per_cm2: f64,
    pub dram_kg: f64,
    #[serde(default)]
    pub peripherals: Vec<Peripheral>,
}

impl SocBom {
    pub fn validate(&self) -> Result<()> {
        non_negative("die_area_cm2", self.die_area_cm2)?;
        non_negative("cpa_die_kg_per_cm2", self.cpa_die_kg_per_cm2)?;
        non_negative("pcb_area_cm2", self.pcb_area_cm2)?;
        non_negative("cpa_pcb_kg_per_cm2", self.cpa_pcb_kg_per_cm2)?;
        non_negative("dram_kg", self.dram_kg)?;
        let mut sum = 0.0;
        for u in &self.units {
            ensure((0.0..=1.0).contains(&u.area_fraction), || {
                format!(
                    "unit {} has area fraction {} outside [0, 1]",
                    u.name, u.area_fraction
                )
            })?;
            ensure(
                u.name != OTHER_UNIT && u.name != PCB && u.name != DRAM,
                || format!("unit name `{}` is reserved", u.name),
            )?;
            sum += u.area_fraction;
        }
        ensure(sum <= 1.0 + 1e-12, || {
            format!("unit fractions sum to {sum} > 1")
        })?;
        for p in &self.peripherals {
            non_negative(&p.name, p.kg)?;
        }
        Ok(())
    }

    fn unassigned_fraction(&self) -> f64 {
        (1.0 - self.units.iter().map(|u| u.area_fraction).sum::<f64>()).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub kg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbodiedReport {
    pub bom: String,
    pub per_component: Vec<Component>,
    pub total: f64,
    /// Sum of die units (chip-level silicon carbon).
    pub die_total: f64,
    pub llm_fraction: f64,
}

impl EmbodiedReport {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.per_component
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.kg)
    }
}

/// `area * cpa`.
pub fn unit_embodied(area_cm2: f64, cpa: f64) -> Result<f64> {
    non_negative("area", area_cm2)?;
    non_negative("cpa", cpa)?;
    Ok(area_cm2 * cpa)
}

/// Per-component breakdown: PCB, each die unit, `other`, DRAM, peripherals.
///
/// `llm_fraction` is left at 0; see [`llm_fraction`].
pub fn soc_embodied(bom: &SocBom) -> Result<EmbodiedReport> {
    bom.validate()?;
    let mut parts = vec![Component {
        name: PCB.into(),
        kg: unit_embodied(bom.pcb_area_cm2, bom.cpa_pcb_kg_per_cm2)?,
    }];
    let mut die_total = 0.0;
    let die_units = bom
        .units
        .iter()
        .map(|u| (u.name.as_str(), u.area_fraction))
        .chain(std::iter::once((OTHER_UNIT, bom.unassigned_fraction())));
    for (name, frac) in die_units {
        let kg = unit_embodied(frac * bom.die_area_cm2, bom.cpa_die_kg_per_cm2)?;
        die_total += kg;
        parts.push(Component {
            name: name.into(),
            kg,
        });
    }
    parts.push(Component {
        name: DRAM.into(),
        kg: bom.dram_kg,
    });
    for p in &bom.peripherals {
        parts.push(Component {
            name: p.name.clone(),
            kg: p.kg,
        });
    }
    let total = parts.iter().map(|c| c.kg).sum();
    Ok(EmbodiedReport {
        bom: bom.name.clone(),
        per_component: parts,
        total,
        die_total,
        llm_fraction: 0.0,
    })
}

/// Percentage of the total attributable to the named components.
pub fn llm_fraction(report: &EmbodiedReport, attributable: &[&str]) -> Result<f64> {
    let mut sum = 0.0;
    for name in attributable {
        sum += report
            .component(name)
            .ok_or_else(|| Error::InvalidInput(format!("no component named `{name}`")))?;
    }
    if report.total == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * sum / report.total)
}

/// Report with `llm_fraction` filled for the given attributable components.
pub fn report_with_fraction(bom: &SocBom, attributable: &[&str]) -> Result<EmbodiedReport> {
    let mut r = soc_embodied(bom)?;
    r.llm_fraction = llm_fraction(&r, attributable)?;
    Ok(r)
}

/// `total(b) - total(a)`.
pub fn delta_embodied(a: &SocBom, b: &SocBom) -> Result<f64> {
    Ok(soc_embodied(b)?.total - soc_embodied(a)?.total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BomMod {
    /// Grow or shrink one die unit's area; the die grows with it.
    ScaleUnit {
        name: String,
        factor: f64,
    },
    SetDram {
        kg: f64,
    },
    SetPcbArea {
        cm2: f64,
    },
}

/// Applies modifications in order and returns the new BOM.
pub fn whatif_bom(bom: &SocBom, mods: &[BomMod]) -> Result<SocBom> {
    bom.validate()?;
    let mut out = bom.clone();
    for m in mods {
        match m {
            BomMod::ScaleUnit { name, factor } => {
                non_negative("factor", *factor)?;
                let idx = out
                    .units
                    .iter()
                    .position(|u| &u.name == name)
                    .ok_or_else(|| Error::InvalidInput(format!("no die unit named `{name}`")))?;
                let old_area = out.die_area_cm2;
                let areas: Vec<f64> = out
                    .units
                    .iter()
                    .map(|u| u.area_fraction * old_area)
                    .collect();
                let grown = areas[idx] * (factor - 1.0);
                let new_area = old_area + grown;
                ensure(new_area > 0.0, || "scaled die has no area".into())?;
                for (i, u) in out.units.iter_mut().enumerate() {
                    let a = if i == idx {
                        areas[i] * factor
                    } else {
                        areas[i]
                    };
                    u.area_fraction = a / new_area;
                }
                out.die_area_cm2 = new_area;
            }
            BomMod::SetDram { kg } => {
                non_negative("dram_kg", *kg)?;
                out.dram_kg = *kg;
            }
            BomMod::SetPcbArea { cm2 } => {
                non_negative("pcb_area_cm2", *cm2)?;
                out.pcb_area_cm2 = *cm2;
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SocBom {
        SocBom {
            name: "toy".into(),
            die_area_cm2: 2.0,
            cpa_die_kg_per_cm2: 1.5,
            units: vec![
                DieUnit {
                    name: "npu".into(),
                    area_fraction: 0.25,
                },
                DieUnit {
                    name: "cpu".into(),
                    area_fraction: 0.5,
                },
            ],
            pcb_area_cm2: 10.0,
            cpa_pcb_kg_per_cm2: 0.1,
            dram_kg: 0.3,
            peripherals: vec![Peripheral {
                name: "camera".into(),
                kg: 1.43,
            }],
        }
    }

    #[test]
    fn unit_embodied_basics() {
        assert_eq!(unit_embodied(0.0, 5.0).unwrap(), 0.0);
        assert!((unit_embodied(0.89, 1.2).unwrap() - 1.068).abs() < 1e-12);
        assert!(unit_embodied(-1.0, 1.0).is_err());
    }

    #[test]
    fn breakdown_is_additive() {
        let r = soc_embodied(&toy()).unwrap();
        let names: Vec<&str> = r.per_component.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["pcb", "npu", "cpu", "other", "dram", "camera"]);
        assert!((r.component("npu").unwrap() - 0.75).abs() < 1e-12);
        assert!((r.component("other").unwrap() - 0.75).abs() < 1e-12);
        assert!((r.die_total - 3.0).abs() < 1e-12);
        assert!((r.total - (1.0 + 3.0 + 0.3 + 1.43)).abs() < 1e-12);
    }

    #[test]
    fn zero_bom_is_zero() {
        let z = SocBom {
            name: "zero".into(),
            die_area_cm2: 0.0,
            cpa_die_kg_per_cm2: 0.0,
            units: vec![],
            pcb_area_cm2: 0.0,
            cpa_pcb_kg_per_cm2: 0.0,
            dram_kg: 0.0,
            peripherals: vec![],
        };
        let r = soc_embodied(&z).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(llm_fraction(&r, &["dram"]).unwrap(), 0.0);
    }

    #[test]
    fn fraction_edge_cases() {
        let r = soc_embodied(&toy()).unwrap();
        assert_eq!(llm_fraction(&r, &[]).unwrap(), 0.0);
        assert!(llm_fraction(&r, &["gpu"]).is_err());
        let all: Vec<&str> = r.per_component.iter().map(|c| c.name.as_str()).collect();
        assert!((llm_fraction(&r, &all).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_boms_rejected() {
        let mut b = toy();
        b.units[1].area_fraction = 0.9;
        assert!(soc_embodied(&b).is_err());
        let mut b = toy();
        b.units[0].name = "other".into();
        assert!(soc_embodied(&b).is_err());
        let mut b = toy();
        b.dram_kg = -0.1;
        assert!(soc_embodied(&b).is_err());
    }

    #[test]
    fn scale_unit_keeps_other_areas() {
        let b = whatif_bom(
            &toy(),
            &[BomMod::ScaleUnit {
                name: "npu".into(),
                factor: 3.0,
            }],
        )
        .unwrap();
        // npu 0.5 -> 1.5 cm2, die 2.0 -> 3.0 cm2
        assert!((b.die_area_cm2 - 3.0).abs() < 1e-12);
        assert!((b.units[0].area_fraction * b.die_area_cm2 - 1.5).abs() < 1e-12);
        assert!((b.units[1].area_fraction * b.die_area_cm2 - 1.0).abs() < 1e-12);
        let r = soc_embodied(&b).unwrap();
        assert!((r.component("other").unwrap() - 0.75).abs() < 1e-12);
        assert!(whatif_bom(
            &toy(),
            &[BomMod::ScaleUnit {
                name: "gpu".into(),
                factor: 2.0
            }]
        )
        .is_err());
    }

    #[test]
    fn identity_mods_and_delta() {
        assert_eq!(whatif_bom(&toy(), &[]).unwrap(), toy());
        assert_eq!(delta_embodied(&toy(), &toy()).unwrap(), 0.0);
        let bigger = whatif_bom(
            &toy(),
            &[
                BomMod::SetDram { kg: 1.0 },
                BomMod::SetPcbArea { cm2: 20.0 },
            ],
        )
        .unwrap();
        let d = delta_embodied(&toy(), &bigger).unwrap();
        assert!((d - 1.7).abs() < 1e-12);
        assert_eq!(delta_embodied(&bigger, &toy()).unwrap(), -d);
    }

    #[test]
    fn bom_json_uses_unit_suffixed_fields() {
        let v = serde_json::to_value(toy()).unwrap();
        assert!(v.get("die_area_cm2").is_some());
        assert!(v.get("cpa_pcb_kg_per_cm2").is_some());
        let m = serde_json::to_value(BomMod::ScaleUnit {
            name: "npu".into(),
            factor: 8.0,
        })
        .unwrap();
        assert_eq!(m["op"], "scale_unit");
    }
}
