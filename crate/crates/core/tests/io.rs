use std::collections::BTreeSet;

use gravity_core::design::{build_design, Formula};
use gravity_core::io::{
    complete_matrix, generate_synthetic, read_agreements, read_flows, read_regimes, write_agreements, write_flows,
    write_regimes, SyntheticConfig,
};
use gravity_core::panel::{build_panel, expand_event_study, Covariate, EventStudySpec, PanelObservation, PanelOptions};
use proptest::prelude::*;

const CODES: [&str; 5] = ["AAA", "BBB", "CCC", "DDD", "EEE"];

/// Sparse directed panel: one optional value per (pair, year).
fn sparse_panel() -> impl Strategy<Value = Vec<PanelObservation>> {
    (3usize..=5, 2i32..=7).prop_flat_map(|(n, years)| {
        let cells = n * n * years as usize;
        prop::collection::vec(prop::option::weighted(0.7, 0.0f64..500.0), cells).prop_map(move |vals| {
            let mut out = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in 0..n {
                    for t in 0..years {
                        let v = vals[k];
                        k += 1;
                        if let (Some(v), false) = (v, i == j) {
                            out.push(PanelObservation::new(CODES[i], CODES[j], 1860 + t, v));
                        }
                    }
                }
            }
            out
        })
    })
}

fn span(obs: &[PanelObservation]) -> (i32, i32) {
    let years: BTreeSet<i32> = obs.iter().map(|o| o.year).collect();
    (*years.first().unwrap(), *years.last().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn completion_commutes_with_scaling(obs in sparse_panel(), k in 0.001f64..1000.0) {
        prop_assume!(!obs.is_empty());
        let (first, last) = span(&obs);
        let window = ((first + last) / 2, last);
        let Ok((base, rep)) = complete_matrix(&obs, window) else { return Ok(()); };
        let scaled: Vec<_> = obs.iter().map(|o| PanelObservation { flow: o.flow * k, ..o.clone() }).collect();
        let (m, rep2) = complete_matrix(&scaled, window).unwrap();
        prop_assert_eq!(rep, rep2);
        let diff = (m.flows() - base.flows() * k).amax();
        prop_assert!(diff <= 1e-12 * m.flows().amax().max(1.0));
    }

    #[test]
    fn completing_a_complete_panel_is_idempotent(obs in sparse_panel()) {
        prop_assume!(!obs.is_empty());
        let (first, last) = span(&obs);
        let Ok((m, _)) = complete_matrix(&obs, (first, last)) else { return Ok(()); };
        let labels = m.labels().to_vec();
        let mut full = Vec::new();
        for (i, a) in labels.iter().enumerate() {
            for (j, b) in labels.iter().enumerate() {
                if i != j {
                    for y in first..=last {
                        full.push(PanelObservation { exporter: a.clone(), importer: b.clone(), year: y, flow: m.flows()[(i, j)] });
                    }
                }
            }
        }
        let (again, rep) = complete_matrix(&full, (first, last)).unwrap();
        prop_assert_eq!(rep.cells_touched(), 0);
        prop_assert!((again.flows() - m.flows()).amax() <= 1e-12 * m.flows().amax().max(1.0));
    }

    #[test]
    fn flow_files_round_trip(obs in sparse_panel()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.csv");
        write_flows(&path, &obs).unwrap();
        let back = read_flows(&path, None).unwrap();
        prop_assert_eq!(back.rows_read, obs.len());
        prop_assert_eq!(back.observations, obs);
    }
}

#[test]
fn regime_and_agreement_files_round_trip() {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("regimes.csv");
    let a = dir.path().join("agreements.csv");
    write_regimes(&r, &data.regimes).unwrap();
    write_agreements(&a, &data.agreements).unwrap();
    assert_eq!(read_regimes(&r).unwrap(), data.regimes);
    assert_eq!(read_agreements(&a).unwrap(), data.agreements);
}

fn synthetic_panel(seed: u64) -> gravity_core::panel::Panel {
    let cfg = SyntheticConfig {
        n_countries: 8,
        n_years: 8,
        seed,
        ..Default::default()
    };
    let data = generate_synthetic(&cfg).unwrap();
    let opts = PanelOptions {
        lmu_bimetallic_window: None,
        ..Default::default()
    };
    build_panel(&data.flows, &data.regimes, &data.agreements, &opts).unwrap()
}

#[test]
fn pair_dummies_are_symmetric_and_exclusive() {
    for seed in 0..5 {
        let panel = synthetic_panel(seed);
        let index: std::collections::HashMap<_, _> = panel
            .observations
            .iter()
            .enumerate()
            .map(|(r, o)| ((o.exporter.clone(), o.importer.clone(), o.year), r))
            .collect();
        for (r, o) in panel.observations.iter().enumerate() {
            let c = &panel.covariates[r];
            let mirror = &panel.covariates[index[&(o.importer.clone(), o.exporter.clone(), o.year)]];
            assert_eq!(c, mirror);
            let standards = [c.lmu, c.silver, c.bimetal_non_lmu, c.paper_std].iter().filter(|b| **b).count();
            assert!(standards <= 1, "{o:?} {c:?}");
            assert!(!(c.gold && (c.silver || c.bimetal_non_lmu || c.paper_std)));
            assert!(!c.lmu || c.lmu_event);
        }
    }
}

#[test]
fn event_columns_sum_to_backtracked_indicator() {
    let panel = synthetic_panel(3);
    let spec = EventStudySpec::with_base_years([1860, 1861]);
    let expanded = expand_event_study(&panel, &spec).unwrap();
    let design = build_design(&expanded, &Formula::new([Covariate::Lmu, Covariate::TradeAgreement]), false).unwrap();
    let event_cols: Vec<&Vec<f64>> = design
        .names
        .iter()
        .zip(&design.columns)
        .filter(|(n, _)| n.starts_with("lmu_"))
        .map(|(_, c)| c)
        .collect();
    assert!(!event_cols.is_empty());
    let dropped_event_terms = design.dropped.iter().filter(|d| d.name.starts_with("lmu_")).count();
    assert_eq!(event_cols.len() + dropped_event_terms, 6);
    for (r, o) in expanded.observations.iter().enumerate() {
        let total: f64 = event_cols.iter().map(|c| c[r]).sum();
        let active = expanded.covariates[r].lmu_event && !spec.base_years.contains(&o.year);
        if dropped_event_terms == 0 {
            assert_eq!(total, f64::from(u8::from(active)));
        } else {
            assert!(total <= f64::from(u8::from(active)));
        }
    }
}

#[test]
fn panel_and_design_are_deterministic() {
    let a = synthetic_panel(9);
    let b = synthetic_panel(9);
    assert_eq!(a, b);
    let da = build_design(&a, &Formula::baseline(), false).unwrap();
    let db = build_design(&b, &Formula::baseline(), false).unwrap();
    assert_eq!(da, db);
}
