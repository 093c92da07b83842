//! Bilateral trade panel and monetary-regime coding.
//!
//! A [`Panel`] holds directed flows `exporter -> importer` per year together
//! with the pair-year dummies derived from a [`RegimeTable`] (monetary
//! standard and union membership per country-year) and an
//! [`AgreementTable`] (trade agreements, alliances, wars).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GravityError, Result};

/// ISO-style country code, normalised to upper case.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Country(String);

impl Country {
    pub fn new(code: impl AsRef<str>) -> Self {
        Country(code.as_ref().trim().to_ascii_uppercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Country {
    fn from(s: &str) -> Self {
        Country::new(s)
    }
}

/// The 37 countries and territories of the reference 1860–1913 sample.
pub const REFERENCE_COUNTRIES: [&str; 37] = [
    "ARG", "AUS", "AUT", "BEL", "BGR", "BRA", "CAN", "CHE", "CHL", "CHN", "COL", "CUB", "DEU",
    "DNK", "EGY", "ESP", "FIN", "FRA", "GBR", "GRC", "IDN", "IND", "ITA", "JPN", "KOR", "MEX",
    "NLD", "NOR", "NZL", "PHL", "PRT", "RUS", "SWE", "TWN", "URY", "USA", "ZAF",
];

/// Latin Monetary Union entry years (inclusive) for the reference coding.
pub const LMU_ENTRY_YEARS: [(&str, i32); 5] = [
    ("BEL", 1865),
    ("FRA", 1865),
    ("CHE", 1865),
    ("ITA", 1865),
    ("GRC", 1868),
];

pub fn reference_countries() -> BTreeSet<Country> {
    REFERENCE_COUNTRIES.iter().map(|c| Country::new(c)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standard {
    Gold,
    Silver,
    Bimetallic,
    Paper,
}

impl FromStr for Standard {
    type Err = GravityError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gold" => Ok(Standard::Gold),
            "silver" => Ok(Standard::Silver),
            "bimetallic" | "bimetal" => Ok(Standard::Bimetallic),
            "paper" => Ok(Standard::Paper),
            other => Err(GravityError::InvalidRegime(format!(
                "unknown monetary standard '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Standard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Standard::Gold => "gold",
            Standard::Silver => "silver",
            Standard::Bimetallic => "bimetallic",
            Standard::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub country: Country,
    pub year: i32,
    pub standard: Standard,
    pub lmu_member: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegimeEntry {
    pub standard: Standard,
    pub lmu_member: bool,
}

/// Country-year map to monetary standard and union membership.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegimeTable {
    entries: BTreeMap<(Country, i32), RegimeEntry>,
}

impl RegimeTable {
    /// Builds the table. Exact duplicate rows collapse; rows that disagree
    /// for the same country-year are rejected.
    pub fn from_rows(rows: impl IntoIterator<Item = RegimeRow>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for row in rows {
            let entry = RegimeEntry {
                standard: row.standard,
                lmu_member: row.lmu_member,
            };
            match entries.insert((row.country.clone(), row.year), entry) {
                Some(prev) if prev != entry => {
                    return Err(GravityError::ContradictoryRegime {
                        country: row.country.to_string(),
                        year: row.year,
                    })
                }
                _ => {}
            }
        }
        Ok(RegimeTable { entries })
    }

    pub fn get(&self, country: &Country, year: i32) -> Option<&RegimeEntry> {
        self.entries.get(&(country.clone(), year))
    }

    fn require(&self, country: &Country, year: i32) -> Result<&RegimeEntry> {
        self.get(country, year)
            .ok_or_else(|| GravityError::MissingRegime {
                country: country.to_string(),
                year,
            })
    }

    pub fn countries(&self) -> BTreeSet<Country> {
        self.entries.keys().map(|(c, _)| c.clone()).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = RegimeRow> + '_ {
        self.entries.iter().map(|((c, y), e)| RegimeRow {
            country: c.clone(),
            year: *y,
            standard: e.standard,
            lmu_member: e.lmu_member,
        })
    }

    /// Countries that are union members in at least one year of `years`.
    pub fn lmu_members_within(&self, years: (i32, i32)) -> BTreeSet<Country> {
        self.entries
            .iter()
            .filter(|((_, y), e)| e.lmu_member && *y >= years.0 && *y <= years.1)
            .map(|((c, _), _)| c.clone())
            .collect()
    }

    /// First year in which `country` is coded as a union member.
    pub fn entry_year(&self, country: &Country) -> Option<i32> {
        self.entries
            .iter()
            .filter(|((c, _), e)| c == country && e.lmu_member)
            .map(|((_, y), _)| *y)
            .min()
    }

    /// Union members must be on the bimetallic standard inside `window`.
    pub fn validate_lmu_standard(&self, window: (i32, i32)) -> Result<()> {
        for ((c, y), e) in &self.entries {
            if e.lmu_member && *y >= window.0 && *y <= window.1 && e.standard != Standard::Bimetallic
            {
                return Err(GravityError::InvalidRegime(format!(
                    "{c} is a union member in {y} but coded on the {} standard",
                    e.standard
                )));
            }
        }
        Ok(())
    }

    fn both_members(&self, i: &Country, j: &Country, year: i32) -> bool {
        matches!(
            (self.get(i, year), self.get(j, year)),
            (Some(a), Some(b)) if a.lmu_member && b.lmu_member
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgreementKind {
    #[serde(rename = "ta")]
    TradeAgreement,
    #[serde(rename = "alliance")]
    Alliance,
    #[serde(rename = "war")]
    War,
}

impl FromStr for AgreementKind {
    type Err = GravityError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ta" => Ok(AgreementKind::TradeAgreement),
            "alliance" => Ok(AgreementKind::Alliance),
            "war" => Ok(AgreementKind::War),
            other => Err(GravityError::Config(format!("unknown agreement kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub c1: Country,
    pub c2: Country,
    pub year_start: i32,
    pub year_end: i32,
    pub kind: AgreementKind,
}

/// Undirected pair-level spells (both endpoints inclusive).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgreementTable {
    spells: BTreeMap<(Country, Country), Vec<(i32, i32, AgreementKind)>>,
}

fn unordered(a: &Country, b: &Country) -> (Country, Country) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl AgreementTable {
    pub fn new(agreements: impl IntoIterator<Item = Agreement>) -> Result<Self> {
        let mut spells: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for a in agreements {
            if a.year_end < a.year_start {
                return Err(GravityError::Config(format!(
                    "agreement {}-{} ends ({}) before it starts ({})",
                    a.c1, a.c2, a.year_end, a.year_start
                )));
            }
            spells
                .entry(unordered(&a.c1, &a.c2))
                .or_default()
                .push((a.year_start, a.year_end, a.kind));
        }
        for v in spells.values_mut() {
            v.sort();
        }
        Ok(AgreementTable { spells })
    }

    pub fn active(&self, kind: AgreementKind, i: &Country, j: &Country, year: i32) -> bool {
        self.spells.get(&unordered(i, j)).is_some_and(|v| {
            v.iter()
                .any(|&(s, e, k)| k == kind && year >= s && year <= e)
        })
    }

    pub fn agreements(&self) -> impl Iterator<Item = Agreement> + '_ {
        self.spells.iter().flat_map(|((a, b), v)| {
            v.iter().map(move |&(s, e, k)| Agreement {
                c1: a.clone(),
                c2: b.clone(),
                year_start: s,
                year_end: e,
                kind: k,
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Lmu,
    Gold,
    Silver,
    BimetalNonLmu,
    PaperStd,
    #[serde(rename = "ta")]
    TradeAgreement,
    Alliance,
    War,
}

impl Covariate {
    pub const ALL: [Covariate; 8] = [
        Covariate::Lmu,
        Covariate::Gold,
        Covariate::Silver,
        Covariate::BimetalNonLmu,
        Covariate::PaperStd,
        Covariate::TradeAgreement,
        Covariate::Alliance,
        Covariate::War,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Lmu => "lmu",
            Covariate::Gold => "gold",
            Covariate::Silver => "silver",
            Covariate::BimetalNonLmu => "bimetal_non_lmu",
            Covariate::PaperStd => "paper_std",
            Covariate::TradeAgreement => "ta",
            Covariate::Alliance => "alliance",
            Covariate::War => "war",
        }
    }
}

impl FromStr for Covariate {
    type Err = GravityError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Covariate::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| GravityError::Config(format!("unknown covariate '{s}'")))
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingOptions {
    /// Allow the gold-pair dummy to be 1 for union pairs that are both on gold.
    pub overlap_gold: bool,
    /// Years before joint membership covered by the event-study indicator.
    pub backtrack: u32,
}

impl Default for CodingOptions {
    fn default() -> Self {
        CodingOptions {
            overlap_gold: true,
            backtrack: 3,
        }
    }
}

/// Pair-year dummy variables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCovariates {
    pub lmu: bool,
    pub gold: bool,
    pub silver: bool,
    pub bimetal_non_lmu: bool,
    pub paper_std: bool,
    pub trade_agreement: bool,
    pub alliance: bool,
    pub war: bool,
    /// Union indicator extended `backtrack` years before joint entry; feeds
    /// the per-year event-study columns only.
    pub lmu_event: bool,
}

impl PairCovariates {
    pub fn value(&self, covariate: Covariate) -> f64 {
        let on = match covariate {
            Covariate::Lmu => self.lmu,
            Covariate::Gold => self.gold,
            Covariate::Silver => self.silver,
            Covariate::BimetalNonLmu => self.bimetal_non_lmu,
            Covariate::PaperStd => self.paper_std,
            Covariate::TradeAgreement => self.trade_agreement,
            Covariate::Alliance => self.alliance,
            Covariate::War => self.war,
        };
        if on {
            1.0
        } else {
            0.0
        }
    }
}

/// Codes the dummies for the directed pair `(i, j)` in year `t`.
pub fn code_pair_dummies(
    regimes: &RegimeTable,
    agreements: &AgreementTable,
    i: &Country,
    j: &Country,
    t: i32,
    options: &CodingOptions,
) -> Result<PairCovariates> {
    let ri = *regimes.require(i, t)?;
    let rj = *regimes.require(j, t)?;
    if i == j {
        return Ok(PairCovariates::default());
    }

    let lmu = ri.lmu_member && rj.lmu_member;
    let same = |s: Standard| ri.standard == s && rj.standard == s;
    let gold = same(Standard::Gold) && (options.overlap_gold || !lmu);
    let lmu_event = lmu
        || (1..=options.backtrack as i32).any(|k| regimes.both_members(i, j, t + k));

    Ok(PairCovariates {
        lmu,
        gold,
        silver: same(Standard::Silver) && !lmu,
        bimetal_non_lmu: same(Standard::Bimetallic) && !lmu,
        paper_std: same(Standard::Paper) && !lmu,
        trade_agreement: agreements.active(AgreementKind::TradeAgreement, i, j, t),
        alliance: agreements.active(AgreementKind::Alliance, i, j, t),
        war: agreements.active(AgreementKind::War, i, j, t),
        lmu_event,
    })
}

/// One directed flow from `exporter` to `importer` in `year`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub exporter: Country,
    pub importer: Country,
    pub year: i32,
    pub flow: f64,
}

impl PanelObservation {
    pub fn new(exporter: impl Into<Country>, importer: impl Into<Country>, year: i32, flow: f64) -> Self {
        PanelObservation {
            exporter: exporter.into(),
            importer: importer.into(),
            year,
            flow,
        }
    }

    pub fn is_domestic(&self) -> bool {
        self.exporter == self.importer
    }

    pub fn key(&self) -> String {
        format!("{}-{}-{}", self.exporter, self.importer, self.year)
    }
}

impl From<String> for Country {
    fn from(s: String) -> Self {
        Country::new(s)
    }
}

impl From<&Country> for Country {
    fn from(c: &Country) -> Self {
        c.clone()
    }
}

/// Rejects negative or non-finite flows and duplicate `(i, j, t)` keys.
pub fn validate_flows(flows: &[PanelObservation]) -> Result<()> {
    for obs in flows {
        if !obs.flow.is_finite() || obs.flow < 0.0 {
            return Err(GravityError::InvalidFlow {
                key: obs.key(),
                value: obs.flow,
            });
        }
    }
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for obs in flows {
        let k = (obs.exporter.clone(), obs.importer.clone(), obs.year);
        if !seen.insert(k) {
            dups.insert(obs.key());
        }
    }
    if dups.is_empty() {
        Ok(())
    } else {
        Err(GravityError::DuplicateObservations(dups.into_iter().collect()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelOptions {
    pub coding: CodingOptions,
    /// Keep `i == i` rows (domestic trade).
    pub domestic: bool,
    /// Inclusive year window; `None` keeps every year.
    pub window: Option<(i32, i32)>,
    /// Years in which union members must be bimetallic.
    pub lmu_bimetallic_window: Option<(i32, i32)>,
}

impl Default for PanelOptions {
    fn default() -> Self {
        PanelOptions {
            coding: CodingOptions::default(),
            domestic: false,
            window: None,
            lmu_bimetallic_window: Some((1865, 1873)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub observations: usize,
    pub zero_flows: usize,
    pub countries: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub domestic_rows: usize,
    pub domestic_rows_skipped: usize,
    pub outside_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStudyColumns {
    pub base_years: BTreeSet<i32>,
    pub years: Vec<i32>,
}

/// Indexed, coded panel. Rows are sorted by `(year, exporter, importer)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub observations: Vec<PanelObservation>,
    pub covariates: Vec<PairCovariates>,
    pub event_study: Option<EventStudyColumns>,
    pub domestic: bool,
    pub summary: PanelSummary,
}

impl Panel {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.observations.iter().map(|o| o.year).collect()
    }

    pub fn countries(&self) -> BTreeSet<Country> {
        self.observations
            .iter()
            .flat_map(|o| [o.exporter.clone(), o.importer.clone()])
            .collect()
    }

    pub fn flows(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.flow).collect()
    }

    /// Value of the per-year union indicator for `year` on row `row`.
    pub fn event_indicator(&self, row: usize, year: i32) -> bool {
        self.covariates[row].lmu_event && self.observations[row].year == year
    }
}

pub fn build_panel(
    flows: &[PanelObservation],
    regimes: &RegimeTable,
    agreements: &AgreementTable,
    options: &PanelOptions,
) -> Result<Panel> {
    validate_flows(flows)?;
    if let Some(window) = options.lmu_bimetallic_window {
        regimes.validate_lmu_standard(window)?;
    }
    if let Some((a, b)) = options.window {
        if a > b {
            return Err(GravityError::Config(format!("empty window {a}:{b}")));
        }
    }

    let mut skipped_domestic = 0;
    let mut outside = 0;
    let mut kept: Vec<PanelObservation> = Vec::with_capacity(flows.len());
    for obs in flows {
        if let Some((a, b)) = options.window {
            if obs.year < a || obs.year > b {
                outside += 1;
                continue;
            }
        }
        if obs.is_domestic() && !options.domestic {
            skipped_domestic += 1;
            continue;
        }
        kept.push(obs.clone());
    }
    kept.sort_by(|a, b| {
        (a.year, &a.exporter, &a.importer).cmp(&(b.year, &b.exporter, &b.importer))
    });

    let covariates = kept
        .iter()
        .map(|o| code_pair_dummies(regimes, agreements, &o.exporter, &o.importer, o.year, &options.coding))
        .collect::<Result<Vec<_>>>()?;

    let mut panel = Panel {
        observations: kept,
        covariates,
        event_study: None,
        domestic: options.domestic,
        summary: PanelSummary::default(),
    };
    let years = panel.years();
    panel.summary = PanelSummary {
        observations: panel.len(),
        zero_flows: panel.observations.iter().filter(|o| o.flow == 0.0).count(),
        countries: panel.countries().len(),
        first_year: years.first().copied().unwrap_or_default(),
        last_year: years.last().copied().unwrap_or_default(),
        domestic_rows: panel.observations.iter().filter(|o| o.is_domestic()).count(),
        domestic_rows_skipped: skipped_domestic,
        outside_window: outside,
    };
    Ok(panel)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStudySpec {
    pub base_years: BTreeSet<i32>,
    /// Defaults to every panel year outside `base_years`.
    pub indicator_years: Option<BTreeSet<i32>>,
}

impl EventStudySpec {
    pub fn with_base_years(years: impl IntoIterator<Item = i32>) -> Self {
        EventStudySpec {
            base_years: years.into_iter().collect(),
            indicator_years: None,
        }
    }

    /// Reference categories 1860 and 1861.
    pub fn reference() -> Self {
        Self::with_base_years([1860, 1861])
    }
}

/// Replaces the pooled union dummy by one indicator per non-base year.
pub fn expand_event_study(panel: &Panel, spec: &EventStudySpec) -> Result<Panel> {
    if spec.base_years.is_empty() {
        return Err(GravityError::Config("event study needs at least one base year".into()));
    }
    let years: Vec<i32> = match &spec.indicator_years {
        Some(ind) => {
            let overlap: Vec<_> = ind.intersection(&spec.base_years).collect();
            if !overlap.is_empty() {
                return Err(GravityError::Config(format!(
                    "base years overlap indicator years: {overlap:?}"
                )));
            }
            ind.iter().copied().collect()
        }
        None => panel
            .years()
            .into_iter()
            .filter(|y| !spec.base_years.contains(y))
            .collect(),
    };
    if years.is_empty() {
        return Err(GravityError::Config("event study has no indicator years".into()));
    }
    let mut out = panel.clone();
    out.event_study = Some(EventStudyColumns {
        base_years: spec.base_years.clone(),
        years,
    });
    Ok(out)
}
