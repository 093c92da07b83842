use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::panel::{Country, PanelObservation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdpRow {
    pub country: Country,
    pub year: i32,
    pub gdp: f64,
}

/// A country-year whose GDP is below its total exports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomesticShortfall {
    pub country: Country,
    pub year: i32,
    pub gdp: f64,
    pub exports: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DomesticFlows {
    pub observations: Vec<PanelObservation>,
    pub shortfalls: Vec<DomesticShortfall>,
}

/// Domestic trade as GDP minus total international exports, for every
/// country-year present both in `gdp` and in the flows. A missing GDP row
/// leaves the domestic cell absent.
pub fn build_domestic_flows(gdp: &[GdpRow], flows: &[PanelObservation]) -> DomesticFlows {
    let mut exports: BTreeMap<(Country, i32), f64> = BTreeMap::new();
    let mut present: BTreeSet<(Country, i32)> = BTreeSet::new();
    for o in flows.iter().filter(|o| !o.is_domestic()) {
        *exports.entry((o.exporter.clone(), o.year)).or_default() += o.flow;
        present.insert((o.exporter.clone(), o.year));
        present.insert((o.importer.clone(), o.year));
    }
    let mut out = DomesticFlows::default();
    for row in gdp {
        let key = (row.country.clone(), row.year);
        if !present.contains(&key) {
            continue;
        }
        let x = exports.get(&key).copied().unwrap_or(0.0);
        let domestic = row.gdp - x;
        if domestic < 0.0 {
            log::warn!(
                "{} {}: GDP {} below total exports {}; domestic flow omitted",
                row.country,
                row.year,
                row.gdp,
                x
            );
            out.shortfalls.push(DomesticShortfall {
                country: row.country.clone(),
                year: row.year,
                gdp: row.gdp,
                exports: x,
            });
            continue;
        }
        out.observations.push(PanelObservation {
            exporter: row.country.clone(),
            importer: row.country.clone(),
            year: row.year,
            flow: domestic,
        });
    }
    out
}
