//! On-disk output formats. Every type rejects unknown fields so that the
//! schema tests notice drift in either direction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const ESTIMATES_SCHEMA: &str = "gravity.estimates/1";
pub const COUNTERFACTUAL_SCHEMA: &str = "gravity.counterfactual/1";
pub const MANIFEST_SCHEMA: &str = "gravity.manifest/1";
pub const DIAGNOSTICS_SCHEMA: &str = "gravity.diagnostics/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesFile {
    pub schema: String,
    pub sample: SampleInfo,
    pub coefficients: Vec<CoefficientRow>,
    pub dropped_terms: Vec<DroppedTermRow>,
    pub dropped_observations: Vec<DroppedObservationRow>,
    pub diagnostics: FitDiagnostics,
}

impl EstimatesFile {
    pub fn coefficient(&self, name: &str) -> Option<&CoefficientRow> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleInfo {
    pub observations: usize,
    pub zero_flows: usize,
    pub countries: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub domestic_rows: usize,
    pub domestic_rows_skipped: usize,
    pub outside_window: usize,
    /// Rows left after separation screening.
    pub retained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientRow {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// `100 (exp(beta) - 1)` and the same transform of the CI bounds.
    pub percent: f64,
    pub percent_lower: f64,
    pub percent_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroppedTermRow {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroppedObservationRow {
    pub exporter: String,
    pub importer: String,
    pub year: i32,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub deviance_history: Vec<f64>,
    pub cluster: String,
    pub n_clusters: usize,
    pub low_rank: bool,
    pub fixed_effect_groups: BTreeMap<String, usize>,
}

/// One row of `event_study.csv`. Dropped years keep their row with empty
/// estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventStudyRow {
    pub year: i32,
    pub term: String,
    pub status: String,
    pub beta: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub percent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualFile {
    pub schema: String,
    pub theta: f64,
    pub beta: f64,
    pub deficit: String,
    pub members: Vec<String>,
    pub average_window: [i32; 2],
    pub iterations: usize,
    pub clearing_residual: f64,
    pub countries: Vec<CountryResult>,
    pub flows: Vec<PairFlow>,
    pub completion: CompletionSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryResult {
    pub country: String,
    pub member: bool,
    pub w_hat: f64,
    pub g_hat: f64,
    pub pi_hat: f64,
    pub expenditure_prime: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFlow {
    pub exporter: String,
    pub importer: String,
    pub baseline: f64,
    pub counterfactual: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionSummary {
    pub zero_filled: usize,
    pub interpolated: usize,
    pub extrapolated: usize,
    pub missing_pairs: Vec<[String; 2]>,
}

/// One row of `attribution.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionCsvRow {
    pub country: String,
    pub member: bool,
    pub baseline_trade: f64,
    pub counterfactual_trade: f64,
    pub level: f64,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub tool: String,
    pub tool_version: String,
    pub core_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    pub schema: String,
    pub command: String,
    pub status: String,
    pub stage: Option<String>,
    pub error: Option<String>,
    pub detail: Option<serde_json::Value>,
    pub warnings: Vec<String>,
}
