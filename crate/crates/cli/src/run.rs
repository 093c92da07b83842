use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gravity_core::design::build_design;
use gravity_core::ge::{
    attribute_union_trade, build_tau_hat, solve_counterfactual, CounterfactualSpec, Direction, TradeMatrix,
};
use gravity_core::io::{
    build_domestic_flows, complete_matrix, generate_synthetic, read_agreements, read_flows, read_gdp, read_regimes,
    write_agreements, write_flows, write_gdp, write_regimes, SyntheticConfig,
};
use gravity_core::panel::{
    build_panel, expand_event_study, AgreementTable, CodingOptions, Country, Covariate, EventStudySpec,
    PanelObservation, PanelOptions, RegimeTable,
};
use gravity_core::ppml::{effect_transform, fit_ppml, EstimateSet, FitOptions, ObservationDropReason};
use gravity_core::GravityError;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::schema::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Load,
    Estimate,
    EventStudy,
    Simulate,
    Generate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Estimate => "estimate",
            Stage::EventStudy => "event-study",
            Stage::Simulate => "simulate",
            Stage::Generate => "generate",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error in stage '{}': {:#}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// Iterates, residuals and histories carried by solver failures.
    pub fn detail(&self) -> Option<serde_json::Value> {
        match self.error.downcast_ref::<GravityError>()? {
            GravityError::NotConverged {
                iterations,
                last_beta,
                last_deviance,
                deviance_history,
            } => Some(serde_json::json!({
                "kind": "not_converged",
                "iterations": iterations,
                "last_beta": last_beta,
                "last_deviance": last_deviance,
                "deviance_history": deviance_history,
            })),
            GravityError::SolverNotConverged {
                iterations,
                residual_trace,
            } => Some(serde_json::json!({
                "kind": "solver_not_converged",
                "iterations": iterations,
                "residual_trace": residual_trace,
            })),
            _ => None,
        }
    }
}

trait InStage<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> InStage<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError { stage, error: e.into() })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// Files read and written by a run, plus warnings for the diagnostics file.
#[derive(Default)]
pub struct RunLog {
    pub inputs: BTreeSet<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl RunLog {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

struct Inputs {
    flows: Vec<PanelObservation>,
    regimes: RegimeTable,
    agreements: AgreementTable,
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    path.as_deref().ok_or_else(|| anyhow!("missing input: pass --{flag}"))
}

fn load(cfg: &RunConfig, log: &mut RunLog) -> StageResult<Inputs> {
    let regimes_path = required(&cfg.regimes, "regimes").stage(Stage::Load)?;
    let flows_path = required(&cfg.flows, "flows").stage(Stage::Load)?;
    let agreements_path = required(&cfg.agreements, "agreements").stage(Stage::Load)?;

    let regimes = read_regimes(regimes_path)
        .with_context(|| format!("regime file {}", regimes_path.display()))
        .stage(Stage::Load)?;
    log.inputs.insert(regimes_path.to_path_buf());
    let known = regimes.countries();
    let table = read_flows(flows_path, Some(&known))
        .with_context(|| format!("flow file {}", flows_path.display()))
        .stage(Stage::Load)?;
    log.inputs.insert(flows_path.to_path_buf());
    let agreements = read_agreements(agreements_path)
        .with_context(|| format!("agreement file {}", agreements_path.display()))
        .stage(Stage::Load)?;
    log.inputs.insert(agreements_path.to_path_buf());

    let mut flows = table.observations;
    if let Some(gdp_path) = &cfg.gdp {
        let gdp = read_gdp(gdp_path)
            .with_context(|| format!("gdp file {}", gdp_path.display()))
            .stage(Stage::Load)?;
        log.inputs.insert(gdp_path.clone());
        if flows.iter().any(PanelObservation::is_domestic) {
            return Err(anyhow!("flow file already has domestic rows; drop --gdp or those rows")).stage(Stage::Load);
        }
        let domestic = build_domestic_flows(&gdp, &flows);
        for s in &domestic.shortfalls {
            log.warn(format!(
                "{} {}: exports {} exceed gdp {}, domestic flow set to zero",
                s.country, s.year, s.exports, s.gdp
            ));
        }
        flows.extend(domestic.observations);
    }
    Ok(Inputs {
        flows,
        regimes,
        agreements,
    })
}

fn panel_options(cfg: &RunConfig) -> PanelOptions {
    PanelOptions {
        coding: CodingOptions {
            overlap_gold: cfg.overlap_gold,
            backtrack: cfg.backtrack,
        },
        domestic: cfg.domestic,
        window: cfg.window.map(|[a, b]| (a, b)),
        lmu_bimetallic_window: cfg.standard_check.then_some((cfg.average_window[0], cfg.average_window[1])),
    }
}

struct Estimation {
    file: EstimatesFile,
    event_rows: Option<Vec<EventStudyRow>>,
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        cluster: cfg.cluster,
        ..Default::default()
    }
}

fn estimates_file(
    panel: &gravity_core::panel::Panel,
    fit: &EstimateSet,
    design_dropped: &[gravity_core::design::DroppedTerm],
    fe_groups: [usize; 3],
) -> EstimatesFile {
    let s = &panel.summary;
    let coefficients = fit
        .names
        .iter()
        .zip(fit.beta.iter().zip(&fit.se))
        .map(|(name, (&beta, &se))| {
            let p = effect_transform(beta, se);
            CoefficientRow {
                name: name.clone(),
                beta,
                se,
                ci_lower: beta - 1.96 * se,
                ci_upper: beta + 1.96 * se,
                percent: p.percent,
                percent_lower: p.lower,
                percent_upper: p.upper,
            }
        })
        .collect();
    let dropped_terms = design_dropped
        .iter()
        .chain(&fit.dropped_terms)
        .map(|d| DroppedTermRow {
            name: d.name.clone(),
            reason: serde_json::to_value(d.reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        })
        .collect();
    let dropped_observations = fit
        .dropped_observations
        .iter()
        .map(|d| {
            let o = &panel.observations[d.row];
            let reason = match &d.reason {
                ObservationDropReason::ZeroGroup(t) => format!("zero_group:{t}"),
                ObservationDropReason::SeparatedBy(t) => format!("separated_by:{t}"),
                ObservationDropReason::Singleton(t) => format!("singleton:{t}"),
                ObservationDropReason::FittedToZero => "fitted_to_zero".to_string(),
            };
            DroppedObservationRow {
                exporter: o.exporter.to_string(),
                importer: o.importer.to_string(),
                year: o.year,
                reason,
            }
        })
        .collect();
    let fixed_effect_groups = ["exporter_year", "importer_year", "pair"]
        .iter()
        .zip(fe_groups)
        .map(|(k, v)| (k.to_string(), v))
        .collect::<BTreeMap<_, _>>();
    EstimatesFile {
        schema: ESTIMATES_SCHEMA.to_string(),
        sample: SampleInfo {
            observations: s.observations,
            zero_flows: s.zero_flows,
            countries: s.countries,
            first_year: s.first_year,
            last_year: s.last_year,
            domestic_rows: s.domestic_rows,
            domestic_rows_skipped: s.domestic_rows_skipped,
            outside_window: s.outside_window,
            retained: fit.retained_rows.len(),
        },
        coefficients,
        dropped_terms,
        dropped_observations,
        diagnostics: FitDiagnostics {
            converged: true,
            iterations: fit.iterations,
            deviance: fit.deviance,
            deviance_history: fit.deviance_history.clone(),
            cluster: fit.cluster.name().to_string(),
            n_clusters: fit.n_clusters,
            low_rank: fit.low_rank,
            fixed_effect_groups,
        },
    }
}

fn fit_panel(
    cfg: &RunConfig,
    panel: &gravity_core::panel::Panel,
    stage: Stage,
    log: &mut RunLog,
) -> StageResult<(EstimatesFile, EstimateSet)> {
    let formula = cfg.formula().stage(stage)?;
    let design = build_design(panel, &formula, cfg.domestic).stage(stage)?;
    let fe = gravity_core::design::index_fixed_effects(panel).group_counts();
    let fit = fit_ppml(&design, &panel.flows(), &fit_options(cfg)).stage(stage)?;
    if fit.low_rank {
        log.warn(format!(
            "{stage}: {} clusters for {} coefficients, covariance is rank deficient",
            fit.n_clusters,
            fit.names.len()
        ));
    }
    if !fit.dropped_observations.is_empty() {
        log.warn(format!("{stage}: {} observations dropped before fitting", fit.dropped_observations.len()));
    }
    for d in design.dropped.iter().chain(&fit.dropped_terms) {
        log.warn(format!("{stage}: term {} dropped ({:?})", d.name, d.reason));
    }
    Ok((estimates_file(panel, &fit, &design.dropped, fe), fit))
}

fn estimate(cfg: &RunConfig, inputs: &Inputs, log: &mut RunLog) -> StageResult<Estimation> {
    let panel = build_panel(&inputs.flows, &inputs.regimes, &inputs.agreements, &panel_options(cfg)).stage(Stage::Estimate)?;
    let (file, _) = fit_panel(cfg, &panel, Stage::Estimate, log)?;

    let event_rows = if cfg.event_study {
        let spec = EventStudySpec::with_base_years(cfg.base_years.iter().copied());
        let expanded = expand_event_study(&panel, &spec).stage(Stage::EventStudy)?;
        let years = expanded.event_study.as_ref().map(|e| e.years.clone()).unwrap_or_default();
        let (es, _) = fit_panel(cfg, &expanded, Stage::EventStudy, log)?;
        let rows = years
            .into_iter()
            .map(|year| {
                let term = format!("{}_{year}", Covariate::Lmu.name());
                match es.coefficient(&term) {
                    Some(c) => EventStudyRow {
                        year,
                        term,
                        status: "estimated".into(),
                        beta: Some(c.beta),
                        se: Some(c.se),
                        ci_lower: Some(c.ci_lower),
                        ci_upper: Some(c.ci_upper),
                        percent: Some(c.percent),
                    },
                    None => EventStudyRow {
                        year,
                        term,
                        status: "dropped".into(),
                        beta: None,
                        se: None,
                        ci_lower: None,
                        ci_upper: None,
                        percent: None,
                    },
                }
            })
            .collect();
        Some(rows)
    } else {
        None
    };
    Ok(Estimation { file, event_rows })
}

struct Simulation {
    file: CounterfactualFile,
    attribution: Vec<AttributionCsvRow>,
}

fn simulate(cfg: &RunConfig, inputs: &Inputs, beta: f64, log: &mut RunLog) -> StageResult<Simulation> {
    let st = Stage::Simulate;
    if !inputs.flows.iter().any(PanelObservation::is_domestic) {
        return Err(anyhow!("the counterfactual needs domestic trade: pass --gdp or include domestic rows in the flow file"))
            .stage(st);
    }
    let window = (cfg.average_window[0], cfg.average_window[1]);
    let (baseline, report) = complete_matrix(&inputs.flows, window).stage(st)?;
    if report.cells_touched() > 0 {
        log.warn(format!(
            "baseline completion: {} zero-filled, {} interpolated, {} carried forward",
            report.zero_filled, report.interpolated, report.extrapolated
        ));
    }
    let members: BTreeSet<Country> = match &cfg.members {
        Some(list) => list.iter().map(Country::new).collect(),
        None => inputs.regimes.lmu_members_within(window),
    };
    if members.is_empty() {
        log.warn("no union members in the averaging window; trade costs unchanged".into());
    }
    let tau = build_tau_hat(beta, cfg.theta, &members, baseline.labels(), Direction::Leave).stage(st)?;
    let spec = CounterfactualSpec::new(tau, cfg.theta).with_deficit(cfg.deficit);
    let result = solve_counterfactual(&baseline, &spec).stage(st)?;
    let rows = attribute_union_trade(&baseline, &result, &members).stage(st)?;

    let file = counterfactual_file(cfg, beta, &members, &baseline, &result, &report);
    let attribution = rows
        .into_iter()
        .map(|r| AttributionCsvRow {
            country: r.country.to_string(),
            member: r.member,
            baseline_trade: r.baseline_trade,
            counterfactual_trade: r.counterfactual_trade,
            level: r.level,
            percent: r.percent,
        })
        .collect();
    Ok(Simulation { file, attribution })
}

fn counterfactual_file(
    cfg: &RunConfig,
    beta: f64,
    members: &BTreeSet<Country>,
    baseline: &TradeMatrix,
    result: &gravity_core::ge::CounterfactualResult,
    report: &gravity_core::io::CompletionReport,
) -> CounterfactualFile {
    let labels = baseline.labels();
    let countries = labels
        .iter()
        .enumerate()
        .map(|(i, c)| CountryResult {
            country: c.to_string(),
            member: members.contains(c),
            w_hat: result.w_hat[i],
            g_hat: result.g_hat[i],
            pi_hat: result.pi_hat[i],
            expenditure_prime: result.expenditure_prime[i],
        })
        .collect();
    let mut flows = Vec::with_capacity(labels.len() * labels.len());
    for (i, a) in labels.iter().enumerate() {
        for (j, b) in labels.iter().enumerate() {
            flows.push(PairFlow {
                exporter: a.to_string(),
                importer: b.to_string(),
                baseline: baseline.flows()[(i, j)],
                counterfactual: result.x_prime[(i, j)],
            });
        }
    }
    CounterfactualFile {
        schema: COUNTERFACTUAL_SCHEMA.to_string(),
        theta: cfg.theta,
        beta,
        deficit: serde_json::to_value(cfg.deficit)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        members: members.iter().map(|c| c.to_string()).collect(),
        average_window: cfg.average_window,
        iterations: result.iterations,
        clearing_residual: result.clearing_residual,
        countries,
        flows,
        completion: CompletionSummary {
            zero_filled: report.zero_filled,
            interpolated: report.interpolated,
            extrapolated: report.extrapolated,
            missing_pairs: report
                .missing_pairs
                .iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
        },
    }
}

fn union_beta(cfg: &RunConfig, log: &mut RunLog) -> StageResult<f64> {
    if let Some(b) = cfg.beta {
        return Ok(b);
    }
    let path = cfg
        .estimates
        .as_deref()
        .ok_or_else(|| anyhow!("no union coefficient: pass --beta or --estimates"))
        .stage(Stage::Load)?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("estimates file {}", path.display()))
        .stage(Stage::Load)?;
    let file: EstimatesFile = serde_json::from_str(&text)
        .with_context(|| format!("estimates file {}", path.display()))
        .stage(Stage::Load)?;
    log.inputs.insert(path.to_path_buf());
    lmu_coefficient(&file).stage(Stage::Load)
}

fn lmu_coefficient(file: &EstimatesFile) -> anyhow::Result<f64> {
    file.coefficient(Covariate::Lmu.name())
        .map(|c| c.beta)
        .ok_or_else(|| anyhow!("the estimates carry no '{}' coefficient", Covariate::Lmu.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T, log: &mut RunLog) -> StageResult<()> {
    let mut text = serde_json::to_string_pretty(value).stage(Stage::Write)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .stage(Stage::Write)?;
    log.outputs.push(path.to_path_buf());
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], log: &mut RunLog) -> StageResult<()> {
    let inner = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    };
    inner()
        .with_context(|| format!("writing {}", path.display()))
        .stage(Stage::Write)?;
    log.outputs.push(path.to_path_buf());
    Ok(())
}

fn prepare_out(cfg: &RunConfig) -> StageResult<()> {
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))
        .stage(Stage::Write)
}

fn write_estimation(cfg: &RunConfig, est: &Estimation, log: &mut RunLog) -> StageResult<()> {
    write_json(&cfg.out.join("estimates.json"), &est.file, log)?;
    if let Some(rows) = &est.event_rows {
        write_csv(&cfg.out.join("event_study.csv"), rows, log)?;
    }
    Ok(())
}

fn write_simulation(cfg: &RunConfig, sim: &Simulation, log: &mut RunLog) -> StageResult<()> {
    write_json(&cfg.out.join("counterfactual.json"), &sim.file, log)?;
    write_csv(&cfg.out.join("attribution.csv"), &sim.attribution, log)
}

pub fn run_estimate(cfg: &RunConfig, log: &mut RunLog) -> StageResult<()> {
    let inputs = load(cfg, log)?;
    let est = estimate(cfg, &inputs, log)?;
    prepare_out(cfg)?;
    write_estimation(cfg, &est, log)
}

pub fn run_simulate(cfg: &RunConfig, log: &mut RunLog) -> StageResult<()> {
    let beta = union_beta(cfg, log)?;
    let inputs = load(cfg, log)?;
    let sim = simulate(cfg, &inputs, beta, log)?;
    prepare_out(cfg)?;
    write_simulation(cfg, &sim, log)
}

pub fn run_pipeline(cfg: &RunConfig, log: &mut RunLog) -> StageResult<()> {
    let inputs = load(cfg, log)?;
    let est = estimate(cfg, &inputs, log)?;
    let beta = match cfg.beta {
        Some(b) => {
            log.warn(format!("--beta {b} overrides the estimated union coefficient"));
            b
        }
        None => lmu_coefficient(&est.file).stage(Stage::Simulate)?,
    };
    let sim = simulate(cfg, &inputs, beta, log)?;
    prepare_out(cfg)?;
    write_estimation(cfg, &est, log)?;
    write_simulation(cfg, &sim, log)
}

#[derive(Serialize)]
struct TruthFile {
    seed: u64,
    countries: usize,
    years: usize,
    beta: BTreeMap<String, f64>,
    members: Vec<String>,
    zero_share_target: f64,
    zero_share_realized: f64,
}

pub fn run_generate(cfg: &RunConfig, log: &mut RunLog) -> StageResult<()> {
    let g = &cfg.generator;
    let mut synth = SyntheticConfig {
        n_countries: g.countries,
        n_years: g.years,
        start_year: g.start_year,
        zero_share: g.zero_share,
        n_members: g.union_size,
        seed: cfg.seed,
        ..Default::default()
    };
    synth.true_beta.insert(Covariate::Lmu, g.true_beta);
    let data = generate_synthetic(&synth).stage(Stage::Generate)?;
    prepare_out(cfg)?;
    let out = &cfg.out;
    let files = [
        out.join("flows.csv"),
        out.join("regimes.csv"),
        out.join("agreements.csv"),
        out.join("gdp.csv"),
    ];
    write_flows(&files[0], &data.flows).stage(Stage::Write)?;
    write_regimes(&files[1], &data.regimes).stage(Stage::Write)?;
    write_agreements(&files[2], &data.agreements).stage(Stage::Write)?;
    write_gdp(&files[3], &data.gdp).stage(Stage::Write)?;
    log.outputs.extend(files);
    let t = &data.truth;
    let truth = TruthFile {
        seed: t.seed,
        countries: t.n_countries,
        years: t.n_years,
        beta: t.beta.iter().map(|(k, v)| (k.name().to_string(), *v)).collect(),
        members: t.members.iter().map(|c| c.to_string()).collect(),
        zero_share_target: t.zero_share_target,
        zero_share_realized: t.zero_share_realized,
    };
    write_json(&out.join("truth.json"), &truth, log)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn display_path(path: &Path, out: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).display().to_string()
}

/// Writes `manifest.json`: versions, the merged config with its hash, the
/// seed and digests of every file read and written. No timestamps.
pub fn write_manifest(cfg: &RunConfig, log: &RunLog) -> StageResult<()> {
    let config = serde_json::to_value(cfg).stage(Stage::Write)?;
    let config_sha256 = hex(&Sha256::digest(serde_json::to_vec(&config).stage(Stage::Write)?));
    let digest = |p: &PathBuf| -> anyhow::Result<FileDigest> {
        Ok(FileDigest {
            path: display_path(p, &cfg.out),
            sha256: sha256_file(p)?,
        })
    };
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: gravity_core::VERSION.to_string(),
        command: cfg.command.clone(),
        config,
        config_sha256,
        seed: cfg.seed,
        inputs: log.inputs.iter().map(digest).collect::<anyhow::Result<_>>().stage(Stage::Write)?,
        outputs: log.outputs.iter().map(digest).collect::<anyhow::Result<_>>().stage(Stage::Write)?,
    };
    let mut text = serde_json::to_string_pretty(&manifest).stage(Stage::Write)?;
    text.push('\n');
    fs::write(cfg.out.join("manifest.json"), text)
        .context("writing manifest")
        .stage(Stage::Write)
}

/// Writes `diagnostics.json` into the output directory, creating it if
/// needed. Failures here are logged, not raised.
pub fn write_diagnostics(out: &Path, command: &str, failure: Option<&StageError>, log: &RunLog) {
    let diag = Diagnostics {
        schema: DIAGNOSTICS_SCHEMA.to_string(),
        command: command.to_string(),
        status: if failure.is_some() { "failed" } else { "ok" }.to_string(),
        stage: failure.map(|f| f.stage.to_string()),
        error: failure.map(|f| format!("{:#}", f.error)),
        detail: failure.and_then(StageError::detail),
        warnings: log.warnings.clone(),
    };
    let write = || -> anyhow::Result<()> {
        fs::create_dir_all(out)?;
        let mut text = serde_json::to_string_pretty(&diag)?;
        text.push('\n');
        fs::write(out.join("diagnostics.json"), text)?;
        Ok(())
    };
    if let Err(e) = write() {
        log::error!("could not write diagnostics: {e:#}");
    }
}
