use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use gravity_core::design::{ClusterBy, Formula};
use gravity_core::ge::DeficitConvention;
use serde::{Deserialize, Serialize};

pub const LABOR_ONLY: &str = "labor-only";

/// Command-line flags shared by every subcommand. Unset flags fall back to
/// the config file, then to the defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// TOML file with any of the keys below (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub flows: Option<PathBuf>,
    #[arg(long)]
    pub regimes: Option<PathBuf>,
    #[arg(long)]
    pub agreements: Option<PathBuf>,
    /// GDP file; domestic flows are built as GDP minus exports.
    #[arg(long)]
    pub gdp: Option<PathBuf>,
    /// Estimation sample, e.g. 1860:1873.
    #[arg(long, value_parser = parse_span)]
    pub window: Option<(i32, i32)>,
    /// One union coefficient per year instead of the pooled dummy.
    #[arg(long)]
    pub event_study: bool,
    /// Reference years of the event study.
    #[arg(long, value_delimiter = ',')]
    pub base_years: Option<Vec<i32>>,
    /// Years before entry that count as treated in the event study.
    #[arg(long)]
    pub backtrack: Option<u32>,
    /// Keep domestic flows and add border-year terms.
    #[arg(long)]
    pub domestic: bool,
    /// Zero the gold dummy on union pairs.
    #[arg(long)]
    pub no_overlap_gold: bool,
    /// Skip the check that union members are bimetallic in the averaging window.
    #[arg(long)]
    pub no_standard_check: bool,
    /// Comma-separated covariates (lmu,gold,silver,bimetal_non_lmu,paper_std,ta,alliance,war).
    #[arg(long)]
    pub covariates: Option<String>,
    /// pair, directional-pair, exporter, importer or year.
    #[arg(long)]
    pub cluster: Option<String>,
    /// Trade elasticity (default 5).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Union coefficient for the counterfactual; overrides --estimates.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// estimates.json from a previous run, read for the union coefficient.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// additive or multiplicative.
    #[arg(long)]
    pub deficit: Option<String>,
    /// Union members for the counterfactual; defaults to the members coded
    /// in the regime file during the averaging window.
    #[arg(long, value_delimiter = ',')]
    pub members: Option<Vec<String>>,
    /// Years averaged into the baseline matrix.
    #[arg(long, value_parser = parse_span)]
    pub average_window: Option<(i32, i32)>,
    /// Only "labor-only" is implemented.
    #[arg(long)]
    pub supply_elasticity: Option<String>,
    /// Seed for `generate`; recorded in the manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// generate: number of countries.
    #[arg(long)]
    pub countries: Option<usize>,
    /// generate: number of years.
    #[arg(long)]
    pub years: Option<usize>,
    /// generate: first year.
    #[arg(long)]
    pub start_year: Option<i32>,
    /// generate: share of thin (mostly zero) pairs.
    #[arg(long)]
    pub zero_share: Option<f64>,
    /// generate: number of union members.
    #[arg(long)]
    pub union_size: Option<usize>,
    /// generate: true union coefficient.
    #[arg(long, allow_hyphen_values = true)]
    pub true_beta: Option<f64>,
}

pub fn parse_span(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected FIRST:LAST, got '{s}'"))?;
    let a: i32 = a.trim().parse().map_err(|_| format!("invalid year '{a}'"))?;
    let b: i32 = b.trim().parse().map_err(|_| format!("invalid year '{b}'"))?;
    if a > b {
        return Err(format!("empty span {a}:{b}"));
    }
    Ok((a, b))
}

/// Keys accepted in the TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub flows: Option<PathBuf>,
    pub regimes: Option<PathBuf>,
    pub agreements: Option<PathBuf>,
    pub gdp: Option<PathBuf>,
    pub window: Option<String>,
    pub event_study: Option<bool>,
    pub base_years: Option<Vec<i32>>,
    pub backtrack: Option<u32>,
    pub domestic: Option<bool>,
    pub overlap_gold: Option<bool>,
    pub standard_check: Option<bool>,
    pub covariates: Option<Vec<String>>,
    pub cluster: Option<String>,
    pub theta: Option<f64>,
    pub beta: Option<f64>,
    pub estimates: Option<PathBuf>,
    pub deficit: Option<String>,
    pub members: Option<Vec<String>>,
    pub average_window: Option<String>,
    pub supply_elasticity: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub countries: Option<usize>,
    pub years: Option<usize>,
    pub start_year: Option<i32>,
    pub zero_share: Option<f64>,
    pub union_size: Option<usize>,
    pub true_beta: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.flows,
            &mut cfg.regimes,
            &mut cfg.agreements,
            &mut cfg.gdp,
            &mut cfg.estimates,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSettings {
    pub countries: usize,
    pub years: usize,
    pub start_year: i32,
    pub zero_share: f64,
    pub union_size: usize,
    pub true_beta: f64,
}

/// Fully resolved settings of one run, echoed into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub flows: Option<PathBuf>,
    pub regimes: Option<PathBuf>,
    pub agreements: Option<PathBuf>,
    pub gdp: Option<PathBuf>,
    pub estimates: Option<PathBuf>,
    pub window: Option<[i32; 2]>,
    pub event_study: bool,
    pub base_years: Vec<i32>,
    pub backtrack: u32,
    pub domestic: bool,
    pub overlap_gold: bool,
    pub standard_check: bool,
    pub covariates: Vec<String>,
    pub cluster: ClusterBy,
    pub theta: f64,
    pub beta: Option<f64>,
    pub deficit: DeficitConvention,
    pub members: Option<Vec<String>>,
    pub average_window: [i32; 2],
    pub supply_elasticity: String,
    pub seed: u64,
    pub out: PathBuf,
    pub generator: GeneratorSettings,
}

impl RunConfig {
    pub fn resolve(command: &str, flags: &Flags) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let span = |flag: Option<(i32, i32)>, file: &Option<String>, key: &str| -> anyhow::Result<Option<[i32; 2]>> {
            if let Some((a, b)) = flag {
                return Ok(Some([a, b]));
            }
            match file {
                Some(s) => {
                    let (a, b) = parse_span(s).map_err(|e| anyhow::anyhow!("config key '{key}': {e}"))?;
                    Ok(Some([a, b]))
                }
                None => Ok(None),
            }
        };

        let covariates = match (&flags.covariates, &file.covariates) {
            (Some(list), _) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            (None, Some(list)) => list.clone(),
            (None, None) => Formula::baseline().covariates.iter().map(|c| c.name().to_string()).collect(),
        };
        Formula::parse(&covariates.join(","))?;

        let cluster: ClusterBy = flags
            .cluster
            .as_deref()
            .or(file.cluster.as_deref())
            .map(str::parse)
            .transpose()?
            .unwrap_or_default();
        let deficit: DeficitConvention = flags
            .deficit
            .as_deref()
            .or(file.deficit.as_deref())
            .map(str::parse)
            .transpose()?
            .unwrap_or_default();

        let theta = flags.theta.or(file.theta).unwrap_or(5.0);
        if !(theta > 0.0) || !theta.is_finite() {
            bail!("theta must be positive, got {theta}");
        }
        let supply_elasticity = flags
            .supply_elasticity
            .clone()
            .or(file.supply_elasticity.clone())
            .unwrap_or_else(|| LABOR_ONLY.to_string());
        if supply_elasticity != LABOR_ONLY {
            bail!(
                "supply elasticity '{supply_elasticity}' is not implemented: only the labor-only model ('{LABOR_ONLY}') is available"
            );
        }

        let generator = GeneratorSettings {
            countries: flags.countries.or(file.countries).unwrap_or(20),
            years: flags.years.or(file.years).unwrap_or(14),
            start_year: flags.start_year.or(file.start_year).unwrap_or(1860),
            zero_share: flags.zero_share.or(file.zero_share).unwrap_or(0.2),
            union_size: flags.union_size.or(file.union_size).unwrap_or(5),
            true_beta: flags.true_beta.or(file.true_beta).unwrap_or(0.3),
        };

        Ok(RunConfig {
            command: command.to_string(),
            flows: flags.flows.clone().or(file.flows),
            regimes: flags.regimes.clone().or(file.regimes),
            agreements: flags.agreements.clone().or(file.agreements),
            gdp: flags.gdp.clone().or(file.gdp),
            estimates: flags.estimates.clone().or(file.estimates),
            window: span(flags.window, &file.window, "window")?,
            event_study: flags.event_study || file.event_study.unwrap_or(false),
            base_years: flags.base_years.clone().or(file.base_years).unwrap_or_else(|| vec![1860, 1861]),
            backtrack: flags.backtrack.or(file.backtrack).unwrap_or(3),
            domestic: flags.domestic || file.domestic.unwrap_or(false),
            overlap_gold: !flags.no_overlap_gold && file.overlap_gold.unwrap_or(true),
            standard_check: !flags.no_standard_check && file.standard_check.unwrap_or(true),
            covariates,
            cluster,
            theta,
            beta: flags.beta.or(file.beta),
            deficit,
            members: flags.members.clone().or(file.members),
            average_window: span(flags.average_window, &file.average_window, "average_window")?.unwrap_or([1865, 1873]),
            supply_elasticity,
            seed: flags.seed.or(file.seed).unwrap_or(1),
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            generator,
        })
    }

    pub fn formula(&self) -> anyhow::Result<Formula> {
        Ok(Formula::parse(&self.covariates.join(","))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans() {
        assert_eq!(parse_span("1860:1873"), Ok((1860, 1873)));
        assert!(parse_span("1873:1860").is_err());
        assert!(parse_span("1860").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "theta = 4.0\ncluster = \"pair\"\nflows = \"data/flows.csv\"\nwindow = \"1860:1885\"\n").unwrap();
        let flags = Flags {
            config: Some(path),
            theta: Some(6.0),
            ..Default::default()
        };
        let cfg = RunConfig::resolve("estimate", &flags).unwrap();
        assert_eq!(cfg.theta, 6.0);
        assert_eq!(cfg.cluster, ClusterBy::Pair);
        assert_eq!(cfg.window, Some([1860, 1885]));
        assert_eq!(cfg.flows, Some(dir.path().join("data/flows.csv")));
        assert_eq!(cfg.deficit, DeficitConvention::Multiplicative);
        assert_eq!(cfg.average_window, [1865, 1873]);
    }

    #[test]
    fn unknown_file_keys_and_supply_elasticity_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "thetta = 4.0\n").unwrap();
        let flags = Flags { config: Some(path), ..Default::default() };
        assert!(RunConfig::resolve("estimate", &flags).is_err());

        let flags = Flags { supply_elasticity: Some("1.24".into()), ..Default::default() };
        let err = RunConfig::resolve("simulate", &flags).unwrap_err().to_string();
        assert!(err.contains("not implemented"));
    }
}
