//! Estimation design: covariate columns, the three absorbed fixed-effect
//! dimensions, cluster assignments and collinearity screening.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::absorb::{Absorber, DemeanOptions, FeDimension};
use crate::error::{GravityError, Result};
use crate::panel::{Country, Covariate, Panel};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingletonGroup {
    pub dimension: String,
    pub group: u32,
}

/// Exporter-year, importer-year and directional-pair group ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffectIndex {
    pub exporter_year: FeDimension,
    pub importer_year: FeDimension,
    pub pair: FeDimension,
    /// Groups with a single observation; they carry no identifying variation.
    pub singletons: Vec<SingletonGroup>,
    /// Set when the panel spans a single year, so the pair effects are
    /// spanned by the exporter-year and importer-year effects.
    pub pair_collinear: bool,
}

impl FixedEffectIndex {
    pub fn dimensions(&self) -> Vec<FeDimension> {
        vec![
            self.exporter_year.clone(),
            self.importer_year.clone(),
            self.pair.clone(),
        ]
    }

    pub fn group_counts(&self) -> [usize; 3] {
        [
            self.exporter_year.n_groups,
            self.importer_year.n_groups,
            self.pair.n_groups,
        ]
    }
}

/// Dense ids assigned in sorted key order, so row permutations permute ids
/// consistently.
fn dense_ids<K: Ord + Clone>(name: &str, keys: &[K]) -> FeDimension {
    let uniq: BTreeSet<K> = keys.iter().cloned().collect();
    let lookup: BTreeMap<K, u32> = uniq.into_iter().enumerate().map(|(i, k)| (k, i as u32)).collect();
    FeDimension {
        name: name.to_string(),
        ids: keys.iter().map(|k| lookup[k]).collect(),
        n_groups: lookup.len(),
    }
}

pub fn index_fixed_effects(panel: &Panel) -> FixedEffectIndex {
    let obs = &panel.observations;
    let exp_keys: Vec<(Country, i32)> = obs.iter().map(|o| (o.exporter.clone(), o.year)).collect();
    let imp_keys: Vec<(Country, i32)> = obs.iter().map(|o| (o.importer.clone(), o.year)).collect();
    let pair_keys: Vec<(Country, Country)> = obs.iter().map(|o| (o.exporter.clone(), o.importer.clone())).collect();

    let exporter_year = dense_ids("exporter_year", &exp_keys);
    let importer_year = dense_ids("importer_year", &imp_keys);
    let pair = dense_ids("pair", &pair_keys);

    let mut singletons = Vec::new();
    for dim in [&exporter_year, &importer_year, &pair] {
        for (g, &n) in dim.group_counts().iter().enumerate() {
            if n == 1 {
                singletons.push(SingletonGroup {
                    dimension: dim.name.clone(),
                    group: g as u32,
                });
            }
        }
    }
    FixedEffectIndex {
        exporter_year,
        importer_year,
        pair,
        singletons,
        pair_collinear: panel.years().len() == 1,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterBy {
    #[default]
    DirectionalPair,
    Pair,
    Exporter,
    Importer,
    Year,
}

impl ClusterBy {
    pub const ALL: [ClusterBy; 5] = [
        ClusterBy::DirectionalPair,
        ClusterBy::Pair,
        ClusterBy::Exporter,
        ClusterBy::Importer,
        ClusterBy::Year,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClusterBy::DirectionalPair => "directional-pair",
            ClusterBy::Pair => "pair",
            ClusterBy::Exporter => "exporter",
            ClusterBy::Importer => "importer",
            ClusterBy::Year => "year",
        }
    }
}

impl FromStr for ClusterBy {
    type Err = GravityError;

    fn from_str(s: &str) -> Result<Self> {
        ClusterBy::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| GravityError::Config(format!("unknown cluster dimension '{s}'")))
    }
}

impl fmt::Display for ClusterBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoVariation,
    AbsorbedByFixedEffects,
    CollinearWithCovariates,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTerm {
    pub name: String,
    pub reason: DropReason,
}

/// Covariate selection, in output order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    pub covariates: Vec<Covariate>,
}

impl Formula {
    pub fn new(covariates: impl IntoIterator<Item = Covariate>) -> Self {
        Formula {
            covariates: covariates.into_iter().collect(),
        }
    }

    /// Union, gold, the three other-standard controls and trade agreements.
    pub fn baseline() -> Self {
        Formula::new([
            Covariate::Lmu,
            Covariate::Gold,
            Covariate::Silver,
            Covariate::BimetalNonLmu,
            Covariate::PaperStd,
            Covariate::TradeAgreement,
        ])
    }

    pub fn without_other_standards() -> Self {
        Formula::new([Covariate::Lmu, Covariate::Gold, Covariate::TradeAgreement])
    }

    pub fn parse(list: &str) -> Result<Self> {
        list.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(Covariate::from_str)
            .collect::<Result<Vec<_>>>()
            .map(Formula::new)
    }
}

/// Everything the PPML engine needs besides the outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub names: Vec<String>,
    /// Column-major covariate matrix, one inner vector per name.
    pub columns: Vec<Vec<f64>>,
    pub fixed_effects: Vec<FeDimension>,
    pub clusters: BTreeMap<ClusterBy, Vec<u32>>,
    pub dropped: Vec<DroppedTerm>,
    pub n_obs: usize,
}

impl DesignSpec {
    /// Design from raw columns. Every observation forms its own
    /// directional-pair cluster until [`DesignSpec::with_clusters`] says
    /// otherwise.
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, fixed_effects: Vec<FeDimension>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(GravityError::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_obs = columns
            .first()
            .map(Vec::len)
            .or_else(|| fixed_effects.first().map(FeDimension::len))
            .unwrap_or(0);
        if columns.iter().any(|c| c.len() != n_obs) || fixed_effects.iter().any(|d| d.len() != n_obs) {
            return Err(GravityError::DimensionMismatch("ragged design columns".into()));
        }
        let mut clusters = BTreeMap::new();
        clusters.insert(ClusterBy::DirectionalPair, (0..n_obs as u32).collect());
        Ok(DesignSpec {
            names,
            columns,
            fixed_effects,
            clusters,
            dropped: Vec::new(),
            n_obs,
        })
    }

    pub fn with_clusters(mut self, by: ClusterBy, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.n_obs {
            return Err(GravityError::DimensionMismatch(format!(
                "{} cluster ids for {} observations",
                ids.len(),
                self.n_obs
            )));
        }
        self.clusters.insert(by, ids);
        Ok(self)
    }

    pub fn cluster_ids(&self, by: ClusterBy) -> Result<&[u32]> {
        self.clusters
            .get(&by)
            .map(Vec::as_slice)
            .ok_or_else(|| GravityError::Config(format!("design has no '{by}' cluster assignment")))
    }

    pub fn n_covariates(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
    }
}

const ABSORBED_TOL: f64 = 1e-7;
const COLLINEAR_TOL: f64 = 1e-7;

/// Splits columns into retained and dropped. A column is dropped when it is
/// identically zero, when its projection off the fixed effects (unit weights)
/// vanishes, or when that projection is spanned by earlier retained columns.
pub(crate) fn screen_columns(
    columns: &[Vec<f64>],
    dims: &[FeDimension],
    weights: &[f64],
) -> Vec<Option<DropReason>> {
    let absorber = Absorber::new(dims, weights);
    let opts = DemeanOptions {
        tolerance: 1e-12,
        ..Default::default()
    };
    let mut projected: Vec<Vec<f64>> = columns.to_vec();
    absorber.demean_columns(&mut projected, &opts);

    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(weights).map(|((x, y), w)| x * y * w).sum() };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::with_capacity(columns.len());
    for (raw, proj) in columns.iter().zip(projected) {
        let raw_scale = raw.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if raw_scale == 0.0 {
            out.push(Some(DropReason::NoVariation));
            continue;
        }
        let proj_scale = proj.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if proj_scale <= ABSORBED_TOL * raw_scale {
            out.push(Some(DropReason::AbsorbedByFixedEffects));
            continue;
        }
        let norm0 = dot(&proj, &proj).sqrt();
        let mut q = proj;
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&q, b);
                q.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&q, &q).sqrt();
        if norm <= COLLINEAR_TOL * norm0 {
            out.push(Some(DropReason::CollinearWithCovariates));
            continue;
        }
        q.iter_mut().for_each(|x| *x /= norm);
        basis.push(q);
        out.push(None);
    }
    out
}

fn undirected_ids(panel: &Panel) -> Vec<(Country, Country)> {
    panel
        .observations
        .iter()
        .map(|o| {
            if o.exporter <= o.importer {
                (o.exporter.clone(), o.importer.clone())
            } else {
                (o.importer.clone(), o.exporter.clone())
            }
        })
        .collect()
}

fn cluster_assignments(panel: &Panel, index: &FixedEffectIndex) -> BTreeMap<ClusterBy, Vec<u32>> {
    let obs = &panel.observations;
    let mut out = BTreeMap::new();
    out.insert(ClusterBy::DirectionalPair, index.pair.ids.clone());
    out.insert(ClusterBy::Pair, dense_ids("pair", &undirected_ids(panel)).ids);
    let exporters: Vec<Country> = obs.iter().map(|o| o.exporter.clone()).collect();
    let importers: Vec<Country> = obs.iter().map(|o| o.importer.clone()).collect();
    let years: Vec<i32> = obs.iter().map(|o| o.year).collect();
    out.insert(ClusterBy::Exporter, dense_ids("exporter", &exporters).ids);
    out.insert(ClusterBy::Importer, dense_ids("importer", &importers).ids);
    out.insert(ClusterBy::Year, dense_ids("year", &years).ids);
    out
}

/// Assembles the covariate matrix in formula order (the union dummy expands
/// into per-year columns for event-study panels), appends border-year terms
/// in domestic mode and screens out unidentified columns.
pub fn build_design(panel: &Panel, formula: &Formula, domestic_mode: bool) -> Result<DesignSpec> {
    if formula.covariates.is_empty() {
        return Err(GravityError::EmptyFormula);
    }
    let mut seen = BTreeSet::new();
    for c in &formula.covariates {
        if !seen.insert(*c) {
            return Err(GravityError::Config(format!("covariate '{c}' listed twice")));
        }
    }
    if panel.is_empty() {
        return Err(GravityError::Config("empty panel".into()));
    }

    let mut names = Vec::new();
    let mut columns = Vec::new();
    for &cov in &formula.covariates {
        match (&panel.event_study, cov) {
            (Some(es), Covariate::Lmu) => {
                for &t in &es.years {
                    names.push(format!("lmu_{t}"));
                    columns.push((0..panel.len()).map(|r| f64::from(u8::from(panel.event_indicator(r, t)))).collect());
                }
            }
            _ => {
                names.push(cov.name().to_string());
                columns.push(panel.covariates.iter().map(|c| c.value(cov)).collect());
            }
        }
    }
    if domestic_mode {
        let years = panel.years();
        // first year is the reference category
        for &t in years.iter().skip(1) {
            names.push(format!("border_{t}"));
            columns.push(
                panel
                    .observations
                    .iter()
                    .map(|o| f64::from(u8::from(!o.is_domestic() && o.year == t)))
                    .collect(),
            );
        }
    }

    let index = index_fixed_effects(panel);
    let dims = index.dimensions();
    let unit = vec![1.0; panel.len()];
    let verdicts = screen_columns(&columns, &dims, &unit);

    let mut kept_names = Vec::new();
    let mut kept_cols = Vec::new();
    let mut dropped = Vec::new();
    for ((name, col), verdict) in names.into_iter().zip(columns).zip(verdicts) {
        match verdict {
            None => {
                kept_names.push(name);
                kept_cols.push(col);
            }
            Some(reason) => {
                log::info!("dropping covariate {name}: {reason:?}");
                dropped.push(DroppedTerm { name, reason });
            }
        }
    }
    if kept_cols.is_empty() {
        return Err(GravityError::NothingIdentifiable);
    }

    Ok(DesignSpec {
        names: kept_names,
        columns: kept_cols,
        clusters: cluster_assignments(panel, &index),
        fixed_effects: dims,
        dropped,
        n_obs: panel.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{
        build_panel, expand_event_study, AgreementTable, EventStudySpec, PanelObservation, PanelOptions,
        RegimeRow, RegimeTable, Standard,
    };

    fn regimes(countries: &[&str], years: std::ops::RangeInclusive<i32>, f: impl Fn(&str, i32) -> (Standard, bool)) -> RegimeTable {
        let mut rows = Vec::new();
        for y in years {
            for c in countries {
                let (standard, lmu_member) = f(c, y);
                rows.push(RegimeRow { country: Country::new(c), year: y, standard, lmu_member });
            }
        }
        RegimeTable::from_rows(rows).unwrap()
    }

    fn panel(countries: &[&str], years: std::ops::RangeInclusive<i32>, domestic: bool, reg: &RegimeTable) -> Panel {
        let mut flows = Vec::new();
        for y in years {
            for i in countries {
                for j in countries {
                    if i != j || domestic {
                        flows.push(PanelObservation::new(*i, *j, y, 1.0));
                    }
                }
            }
        }
        let opts = PanelOptions { domestic, lmu_bimetallic_window: None, ..Default::default() };
        build_panel(&flows, reg, &AgreementTable::default(), &opts).unwrap()
    }

    #[test]
    fn fixed_effect_counts() {
        let c = ["AAA", "BBB", "CCC"];
        let r = regimes(&c, 1860..=1861, |_, _| (Standard::Gold, false));
        let p = panel(&c, 1860..=1861, false, &r);
        let idx = index_fixed_effects(&p);
        assert_eq!(idx.group_counts(), [6, 6, 6]);
        assert!(!idx.pair_collinear);
    }

    #[test]
    fn reference_sized_exporter_year_count() {
        let codes: Vec<String> = (0..37).map(|i| format!("C{i:02}")).collect();
        let c: Vec<&str> = codes.iter().map(String::as_str).collect();
        let r = regimes(&c, 1860..=1913, |_, _| (Standard::Gold, false));
        let p = panel(&c, 1860..=1913, false, &r);
        assert_eq!(index_fixed_effects(&p).exporter_year.n_groups, 1998);
    }

    #[test]
    fn single_year_panel_is_flagged() {
        let c = ["AAA", "BBB", "CCC"];
        let r = regimes(&c, 1860..=1860, |_, _| (Standard::Gold, false));
        let p = panel(&c, 1860..=1860, false, &r);
        let idx = index_fixed_effects(&p);
        assert!(idx.pair_collinear);
        assert_eq!(idx.singletons.len(), 6);
    }

    fn switching_regimes(c: &[&str]) -> RegimeTable {
        regimes(c, 1860..=1866, |code, y| match code {
            "AAA" | "BBB" => (Standard::Bimetallic, y >= 1863),
            "CCC" => (if y >= 1862 { Standard::Gold } else { Standard::Silver }, false),
            "DDD" => (Standard::Gold, false),
            _ => (if y >= 1864 { Standard::Silver } else { Standard::Paper }, false),
        })
    }

    #[test]
    fn baseline_formula_has_six_columns_when_identified() {
        let c = ["AAA", "BBB", "CCC", "DDD", "EEE", "FFF"];
        let r = regimes(&c, 1860..=1866, |code, y| match code {
            "AAA" | "BBB" => (Standard::Bimetallic, y >= 1863),
            "CCC" => (if y >= 1862 { Standard::Gold } else { Standard::Bimetallic }, false),
            "DDD" => (if y >= 1861 { Standard::Gold } else { Standard::Silver }, false),
            "EEE" => (if y >= 1864 { Standard::Silver } else { Standard::Paper }, false),
            _ => (if y >= 1862 { Standard::Silver } else { Standard::Paper }, false),
        });
        let mut p = panel(&c, 1860..=1866, false, &r);
        for (o, cov) in p.observations.iter().zip(p.covariates.iter_mut()) {
            cov.trade_agreement = o.exporter.as_str() == "AAA" && o.importer.as_str() == "CCC" && o.year >= 1864
                || o.exporter.as_str() == "DDD" && o.year >= 1865;
        }
        let d = build_design(&p, &Formula::baseline(), false).unwrap();
        assert_eq!(d.names, vec!["lmu", "gold", "silver", "bimetal_non_lmu", "paper_std", "ta"], "{:?}", d.dropped);
        assert_eq!(d.n_covariates(), 6);
    }

    #[test]
    fn border_year_columns_added_in_domestic_mode() {
        let c = ["AAA", "BBB", "CCC", "DDD", "EEE"];
        let r = switching_regimes(&c);
        let p = panel(&c, 1860..=1866, true, &r);
        let d = build_design(&p, &Formula::new([Covariate::Lmu]), true).unwrap();
        let border: Vec<_> = d.names.iter().filter(|n| n.starts_with("border_")).collect();
        assert_eq!(border.len(), 6);
        assert_eq!(border[0], "border_1861");
    }

    #[test]
    fn border_year_columns_for_full_reference_span() {
        let c = ["AAA", "BBB", "CCC"];
        let r = regimes(&c, 1860..=1913, |_, _| (Standard::Gold, false));
        let p = panel(&c, 1860..=1913, true, &r);
        let d = build_design(&p, &Formula::new([Covariate::Gold]), true);
        // gold is constant here so it is dropped, the border terms survive
        let d = d.unwrap();
        assert_eq!(d.names.iter().filter(|n| n.starts_with("border_")).count(), 53);
        assert_eq!(d.dropped[0].name, "gold");
    }

    #[test]
    fn single_pair_dummy_is_absorbed() {
        let c = ["AAA", "BBB", "CCC", "DDD", "EEE"];
        let r = switching_regimes(&c);
        let mut p = panel(&c, 1860..=1866, false, &r);
        for (o, cov) in p.observations.iter().zip(p.covariates.iter_mut()) {
            cov.war = o.exporter.as_str() == "AAA" && o.importer.as_str() == "BBB";
        }
        let d = build_design(&p, &Formula::new([Covariate::Lmu, Covariate::War]), false).unwrap();
        assert_eq!(d.names, vec!["lmu"]);
        assert_eq!(d.dropped, vec![DroppedTerm { name: "war".into(), reason: DropReason::AbsorbedByFixedEffects }]);
    }

    #[test]
    fn empty_and_unidentifiable_formulas_error() {
        let c = ["AAA", "BBB", "CCC"];
        let r = regimes(&c, 1860..=1862, |_, _| (Standard::Gold, false));
        let p = panel(&c, 1860..=1862, false, &r);
        assert!(matches!(build_design(&p, &Formula::new([]), false), Err(GravityError::EmptyFormula)));
        assert!(matches!(
            build_design(&p, &Formula::new([Covariate::Gold, Covariate::War]), false),
            Err(GravityError::NothingIdentifiable)
        ));
    }

    #[test]
    fn retained_columns_have_positive_within_variance() {
        let c = ["AAA", "BBB", "CCC", "DDD", "EEE"];
        let r = switching_regimes(&c);
        let p = panel(&c, 1860..=1866, false, &r);
        let es = expand_event_study(&p, &EventStudySpec::with_base_years([1860])).unwrap();
        let d = build_design(&es, &Formula::baseline(), false).unwrap();
        let unit = vec![1.0; d.n_obs];
        let ab = Absorber::new(&d.fixed_effects, &unit);
        for col in &d.columns {
            let mut v = col.clone();
            ab.demean(&mut v, &DemeanOptions::default());
            let var: f64 = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
            assert!(var > 1e-8);
        }
    }

    #[test]
    fn permuting_rows_keeps_ids_stable() {
        let c = ["AAA", "BBB", "CCC", "DDD"];
        let r = switching_regimes(&c);
        let p = panel(&c, 1860..=1863, false, &r);
        let idx = index_fixed_effects(&p);
        let mut q = p.clone();
        q.observations.reverse();
        q.covariates.reverse();
        let idx_rev = index_fixed_effects(&q);
        let n = p.len();
        for row in 0..n {
            assert_eq!(idx.pair.ids[row], idx_rev.pair.ids[n - 1 - row]);
            assert_eq!(idx.exporter_year.ids[row], idx_rev.exporter_year.ids[n - 1 - row]);
        }
    }

    #[test]
    fn cluster_dimensions() {
        let c = ["AAA", "BBB", "CCC"];
        let r = regimes(&c, 1860..=1861, |_, _| (Standard::Gold, false));
        let p = panel(&c, 1860..=1861, false, &r);
        let mut d = DesignSpec::new(vec!["x".into()], vec![vec![1.0; p.len()]], vec![]).unwrap();
        d.clusters = cluster_assignments(&p, &index_fixed_effects(&p));
        let count = |by| d.cluster_ids(by).unwrap().iter().collect::<BTreeSet<_>>().len();
        assert_eq!(count(ClusterBy::DirectionalPair), 6);
        assert_eq!(count(ClusterBy::Pair), 3);
        assert_eq!(count(ClusterBy::Exporter), 3);
        assert_eq!(count(ClusterBy::Year), 2);
    }
}
