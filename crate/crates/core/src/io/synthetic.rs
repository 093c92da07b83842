use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{GravityError, Result};
use crate::io::domestic::GdpRow;
use crate::panel::{
    code_pair_dummies, Agreement, AgreementKind, AgreementTable, CodingOptions, Country, Covariate,
    PanelObservation, RegimeRow, RegimeTable, Standard,
};

/// Parameters of a synthetic gravity panel whose Poisson means are
/// `exp(exporter-year + importer-year + pair + x'beta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_countries: usize,
    pub n_years: usize,
    pub start_year: i32,
    pub true_beta: BTreeMap<Covariate, f64>,
    /// Standard deviation of the exporter-year and importer-year effects.
    pub fe_scale: f64,
    /// Standard deviation of the pair effects around `log_mean`.
    pub pair_scale: f64,
    /// Log of the typical mean flow of an active pair.
    pub log_mean: f64,
    /// Share of directed pairs drawn as thin (mean around 0.05, mostly zero).
    pub zero_share: f64,
    /// Number of union members; the last joins two years after the others.
    pub n_members: usize,
    /// Years before the union starts.
    pub pre_years: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_countries: 10,
            n_years: 10,
            start_year: 1860,
            true_beta: [
                (Covariate::Lmu, 0.3),
                (Covariate::Gold, 0.15),
                (Covariate::Silver, 0.1),
                (Covariate::BimetalNonLmu, 0.05),
                (Covariate::PaperStd, -0.1),
                (Covariate::TradeAgreement, 0.2),
            ]
            .into(),
            fe_scale: 0.5,
            pair_scale: 0.5,
            log_mean: 4.0,
            zero_share: 0.2,
            n_members: 4,
            pre_years: 2,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub seed: u64,
    pub n_countries: usize,
    pub n_years: usize,
    pub beta: BTreeMap<Covariate, f64>,
    pub members: Vec<Country>,
    pub zero_share_target: f64,
    pub zero_share_realized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub flows: Vec<PanelObservation>,
    pub regimes: RegimeTable,
    pub agreements: AgreementTable,
    /// Total exports plus a domestic component of 1.5 to 4 times exports.
    pub gdp: Vec<GdpRow>,
    pub truth: SyntheticTruth,
}

const THIN_MEAN: f64 = 0.05;
const STANDARDS: [Standard; 4] = [Standard::Gold, Standard::Silver, Standard::Bimetallic, Standard::Paper];

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    let c = config;
    if c.n_countries < 3 || c.n_years < 2 {
        return Err(GravityError::Generator(format!(
            "need at least 3 countries and 2 years, got {} x {}",
            c.n_countries, c.n_years
        )));
    }
    if !(0.0..1.0).contains(&c.zero_share) {
        return Err(GravityError::Generator(format!(
            "zero_share must lie in [0, 1), got {}; every mean would be near zero",
            c.zero_share
        )));
    }
    if !c.log_mean.is_finite() || !(c.fe_scale >= 0.0) || !(c.pair_scale >= 0.0) {
        return Err(GravityError::Generator("invalid mean or effect scales".into()));
    }
    if c.n_members > c.n_countries {
        return Err(GravityError::Generator("more union members than countries".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let countries: Vec<Country> = (0..c.n_countries).map(|i| Country::new(format!("S{i:02}"))).collect();
    let years: Vec<i32> = (0..c.n_years as i32).map(|t| c.start_year + t).collect();
    let union_start = c.start_year + c.pre_years as i32;

    // regimes: members bimetallic throughout; others draw a standard and
    // switch once with probability one half
    let mut rows = Vec::new();
    for (k, country) in countries.iter().enumerate() {
        if k < c.n_members {
            let entry = if k + 1 == c.n_members && c.n_members > 2 { union_start + 2 } else { union_start };
            for &y in &years {
                rows.push(RegimeRow {
                    country: country.clone(),
                    year: y,
                    standard: Standard::Bimetallic,
                    lmu_member: y >= entry,
                });
            }
        } else {
            let first = *STANDARDS.choose(&mut rng).expect("nonempty");
            let switch = rng.random_bool(0.5).then(|| {
                let at = years[rng.random_range(1..years.len())];
                let next = *STANDARDS.iter().filter(|s| **s != first).collect::<Vec<_>>().choose(&mut rng).expect("nonempty");
                (at, *next)
            });
            for &y in &years {
                let standard = match switch {
                    Some((at, next)) if y >= at => next,
                    _ => first,
                };
                rows.push(RegimeRow {
                    country: country.clone(),
                    year: y,
                    standard,
                    lmu_member: false,
                });
            }
        }
    }
    let regimes = RegimeTable::from_rows(rows)?;

    let mut agreements = Vec::new();
    for a in 0..c.n_countries {
        for b in a + 1..c.n_countries {
            if rng.random_bool(0.2) {
                let start = years[rng.random_range(0..years.len())];
                agreements.push(Agreement {
                    c1: countries[a].clone(),
                    c2: countries[b].clone(),
                    year_start: start,
                    year_end: *years.last().expect("nonempty"),
                    kind: AgreementKind::TradeAgreement,
                });
            }
        }
    }
    let agreements = AgreementTable::new(agreements)?;

    let fe = Normal::new(0.0, c.fe_scale).map_err(|e| GravityError::Generator(e.to_string()))?;
    let pair_fe = Normal::new(c.log_mean, c.pair_scale).map_err(|e| GravityError::Generator(e.to_string()))?;
    let exporter_year: Vec<Vec<f64>> = (0..c.n_countries).map(|_| years.iter().map(|_| fe.sample(&mut rng)).collect()).collect();
    let importer_year: Vec<Vec<f64>> = (0..c.n_countries).map(|_| years.iter().map(|_| fe.sample(&mut rng)).collect()).collect();

    let mut pairs: Vec<(usize, usize)> = (0..c.n_countries)
        .flat_map(|i| (0..c.n_countries).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    let n_thin = (c.zero_share * pairs.len() as f64).round() as usize;
    let mut pair_effect = BTreeMap::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let v = if k < n_thin { THIN_MEAN.ln() } else { pair_fe.sample(&mut rng) };
        pair_effect.insert((i, j), v);
    }

    let opts = CodingOptions::default();
    let mut flows = Vec::with_capacity(pairs.len() * years.len());
    let mut any_positive_mean = false;
    for (t, &year) in years.iter().enumerate() {
        for i in 0..c.n_countries {
            for j in 0..c.n_countries {
                if i == j {
                    continue;
                }
                let cov = code_pair_dummies(&regimes, &agreements, &countries[i], &countries[j], year, &opts)?;
                let xb: f64 = c.true_beta.iter().map(|(k, b)| b * cov.value(*k)).sum();
                let mean = (exporter_year[i][t] + importer_year[j][t] + pair_effect[&(i, j)] + xb).exp();
                if !mean.is_finite() {
                    return Err(GravityError::Generator(format!("non-finite mean for {i}->{j} in {year}")));
                }
                any_positive_mean |= mean > 1e-300;
                let draw = if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| GravityError::Generator(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                flows.push(PanelObservation {
                    exporter: countries[i].clone(),
                    importer: countries[j].clone(),
                    year,
                    flow: draw,
                });
            }
        }
    }
    if !any_positive_mean || flows.iter().all(|o| o.flow == 0.0) {
        return Err(GravityError::Generator("every generated flow is zero".into()));
    }

    let mut exports: BTreeMap<(usize, i32), f64> = BTreeMap::new();
    for o in &flows {
        let i = countries.iter().position(|c| *c == o.exporter).expect("generated code");
        *exports.entry((i, o.year)).or_default() += o.flow;
    }
    let mut gdp = Vec::with_capacity(c.n_countries * years.len());
    for (i, country) in countries.iter().enumerate() {
        for &year in &years {
            let x = exports.get(&(i, year)).copied().unwrap_or(0.0);
            gdp.push(GdpRow {
                country: country.clone(),
                year,
                gdp: x + x.max(1.0) * rng.random_range(1.5..4.0),
            });
        }
    }

    let zeros = flows.iter().filter(|o| o.flow == 0.0).count();
    let truth = SyntheticTruth {
        seed: c.seed,
        n_countries: c.n_countries,
        n_years: c.n_years,
        beta: c.true_beta.clone(),
        members: countries[..c.n_members].to_vec(),
        zero_share_target: c.zero_share,
        zero_share_realized: zeros as f64 / flows.len() as f64,
    };
    Ok(SyntheticData {
        flows,
        regimes,
        agreements,
        gdp,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.flows, b.flows);
        assert_eq!(a.regimes, b.regimes);
        let other = generate_synthetic(&SyntheticConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.flows, other.flows);
    }

    #[test]
    fn zero_share_is_realised() {
        for seed in 0..5 {
            let cfg = SyntheticConfig {
                zero_share: 0.4,
                seed,
                ..Default::default()
            };
            let d = generate_synthetic(&cfg).unwrap();
            assert!(d.truth.zero_share_realized >= 0.35, "{}", d.truth.zero_share_realized);
        }
    }

    #[test]
    fn degenerate_settings_error() {
        let bad = [
            SyntheticConfig { n_countries: 2, ..Default::default() },
            SyntheticConfig { n_years: 1, ..Default::default() },
            SyntheticConfig { zero_share: 1.0, ..Default::default() },
            SyntheticConfig { log_mean: f64::NEG_INFINITY, ..Default::default() },
        ];
        for cfg in bad {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }

    #[test]
    fn members_join_after_pre_period() {
        let d = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let first = &d.truth.members[0];
        assert_eq!(d.regimes.entry_year(first), Some(1862));
        let last = d.truth.members.last().unwrap();
        assert_eq!(d.regimes.entry_year(last), Some(1864));
    }
}
