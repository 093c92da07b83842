//! Poisson pseudo-maximum-likelihood with absorbed fixed effects.
//!
//! Each IRLS step is a weighted least-squares problem of the working
//! response on the covariates plus every fixed-effect dimension. The fixed
//! effects are partialled out of both sides by weighted alternating
//! projections (see [`crate::absorb`]); the covariate step then only
//! involves a `k x k` system.
//!
//! Observations that are perfectly predicted at zero are removed before the
//! first step: members of a fixed-effect group whose outcomes are all zero,
//! rows where a nonnegative covariate is positive only on zero outcomes, and
//! singleton groups. The screen is repeated to a fixpoint. Separation that
//! only shows up in combination with the fixed effects is caught after the
//! fact: when IRLS stalls with zero outcomes whose fitted means have
//! collapsed, those rows are dropped and the model is refitted.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::absorb::{Absorber, DemeanOptions, FeDimension};
use crate::design::{screen_columns, ClusterBy, DesignSpec, DroppedTerm};
use crate::error::{GravityError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative change in every coefficient.
    pub coef_tolerance: f64,
    /// Relative change in deviance.
    pub deviance_tolerance: f64,
    pub max_iterations: usize,
    /// Inner alternating-projection tolerance.
    pub demean_tolerance: f64,
    pub cluster: ClusterBy,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            coef_tolerance: 1e-8,
            deviance_tolerance: 1e-9,
            max_iterations: 100,
            demean_tolerance: 1e-10,
            cluster: ClusterBy::DirectionalPair,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let tols = [self.coef_tolerance, self.deviance_tolerance, self.demean_tolerance];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(GravityError::Config("fit tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(GravityError::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "term", rename_all = "snake_case")]
pub enum ObservationDropReason {
    /// Fixed-effect group with only zero outcomes.
    ZeroGroup(String),
    /// Covariate positive only on zero outcomes.
    SeparatedBy(String),
    Singleton(String),
    /// Zero outcome whose fitted mean went to zero during a stalled fit.
    FittedToZero,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedObservation {
    pub row: usize,
    pub reason: ObservationDropReason,
}

/// Result of [`fit_ppml`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Cluster-robust covariance, row-major `k x k`.
    pub vcov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub deviance: f64,
    pub deviance_history: Vec<f64>,
    pub iterations: usize,
    pub cluster: ClusterBy,
    pub n_clusters: usize,
    pub low_rank: bool,
    pub dropped_observations: Vec<DroppedObservation>,
    /// Terms lost after separation screening, on top of the design ledger.
    pub dropped_terms: Vec<DroppedTerm>,
    /// Design rows used in estimation, ascending.
    pub retained_rows: Vec<usize>,
    pub outcome: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Working residuals `(y - mu) / mu` on retained rows.
    pub residuals: Vec<f64>,
}

impl EstimateSet {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| (self.beta[k], self.se[k]))
    }
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let t = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            t - (y - m)
        })
        .sum::<f64>()
}

/// Iteratively removes rows that are perfectly predicted at zero and
/// singleton groups. Returns the retained rows and the drop ledger.
pub fn detect_separation(design: &DesignSpec, y: &[f64]) -> (Vec<usize>, Vec<DroppedObservation>) {
    screen_rows(design, y, Vec::new())
}

fn screen_rows(design: &DesignSpec, y: &[f64], excluded: Vec<DroppedObservation>) -> (Vec<usize>, Vec<DroppedObservation>) {
    let n = y.len();
    let mut active = vec![true; n];
    for d in &excluded {
        active[d.row] = false;
    }
    let mut ledger = excluded;
    loop {
        let mut changed = false;
        for dim in &design.fixed_effects {
            let mut total = vec![0.0; dim.n_groups];
            let mut count = vec![0usize; dim.n_groups];
            for r in (0..n).filter(|&r| active[r]) {
                let g = dim.ids[r] as usize;
                total[g] += y[r];
                count[g] += 1;
            }
            for r in 0..n {
                if !active[r] {
                    continue;
                }
                let g = dim.ids[r] as usize;
                let reason = if total[g] == 0.0 {
                    ObservationDropReason::ZeroGroup(dim.name.clone())
                } else if count[g] == 1 {
                    ObservationDropReason::Singleton(dim.name.clone())
                } else {
                    continue;
                };
                active[r] = false;
                changed = true;
                ledger.push(DroppedObservation { row: r, reason });
            }
        }
        for (name, col) in design.names.iter().zip(&design.columns) {
            if col.iter().any(|&x| x < 0.0) {
                continue;
            }
            let support: Vec<usize> = (0..n).filter(|&r| active[r] && col[r] > 0.0).collect();
            if support.is_empty() || support.iter().any(|&r| y[r] > 0.0) {
                continue;
            }
            // dropping would leave nothing to estimate
            if support.len() == (0..n).filter(|&r| active[r]).count() {
                continue;
            }
            for r in support {
                active[r] = false;
                ledger.push(DroppedObservation {
                    row: r,
                    reason: ObservationDropReason::SeparatedBy(name.clone()),
                });
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    ledger.sort_by_key(|d| d.row);
    ((0..n).filter(|&r| active[r]).collect(), ledger)
}

fn gram(cols: &[Vec<f64>], w: &[f64]) -> DMatrix<f64> {
    let k = cols.len();
    let mut m = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let v: f64 = cols[a].iter().zip(&cols[b]).zip(w).map(|((x, y), w)| x * y * w).sum();
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

fn invert_spd(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| GravityError::Singular(what.to_string()))
}

struct Problem {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    dims: Vec<FeDimension>,
    y: Vec<f64>,
}

/// Fits the Poisson pseudo-likelihood and attaches the cluster-robust
/// covariance for `options.cluster`.
pub fn fit_ppml(design: &DesignSpec, outcome: &[f64], options: &FitOptions) -> Result<EstimateSet> {
    options.validate()?;
    if outcome.len() != design.n_obs {
        return Err(GravityError::DimensionMismatch(format!(
            "{} outcomes for {} design rows",
            outcome.len(),
            design.n_obs
        )));
    }
    if let Some((row, &value)) = outcome.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(GravityError::InvalidOutcome { row, value });
    }
    if outcome.iter().all(|&v| v == 0.0) {
        return Err(GravityError::AllZeroOutcome);
    }
    if design.columns.is_empty() {
        return Err(GravityError::EmptyFormula);
    }

    let mut excluded = Vec::new();
    let (fit, problem, rows, dropped_observations, dropped_terms) = loop {
        let (rows, dropped_observations) = screen_rows(design, outcome, excluded.clone());
        if rows.is_empty() {
            return Err(GravityError::NothingIdentifiable);
        }
        let (problem, dropped_terms) = restrict(design, outcome, &rows)?;
        let fit = irls(&problem, options)?;
        if fit.converged {
            break (fit, problem, rows, dropped_observations, dropped_terms);
        }
        let mean_y = problem.y.iter().sum::<f64>() / problem.y.len() as f64;
        let collapsed: Vec<usize> = (0..rows.len())
            .filter(|&i| problem.y[i] == 0.0 && fit.mu[i] < COLLAPSED_MEAN * mean_y)
            .map(|i| rows[i])
            .collect();
        if collapsed.is_empty() {
            if let Some(error) = fit.failure {
                return Err(error);
            }
            return Err(GravityError::NotConverged {
                iterations: fit.iterations,
                last_beta: fit.beta,
                last_deviance: fit.deviance,
                deviance_history: fit.history,
            });
        }
        log::warn!("{} zero outcomes separated jointly with the fixed effects; refitting without them", collapsed.len());
        excluded = dropped_observations;
        excluded.extend(collapsed.into_iter().map(|row| DroppedObservation {
            row,
            reason: ObservationDropReason::FittedToZero,
        }));
    };
    if !dropped_observations.is_empty() {
        log::info!("dropped {} observations before fitting", dropped_observations.len());
    }

    let mut est = EstimateSet {
        names: problem.names,
        beta: fit.beta,
        vcov: Vec::new(),
        se: Vec::new(),
        deviance: fit.deviance,
        deviance_history: fit.history,
        iterations: fit.iterations,
        cluster: options.cluster,
        n_clusters: 0,
        low_rank: false,
        dropped_observations,
        dropped_terms,
        retained_rows: rows,
        residuals: problem
            .y
            .iter()
            .zip(&fit.mu)
            .map(|(y, m)| (y - m) / m)
            .collect(),
        outcome: problem.y,
        fitted: fit.mu,
    };
    let cov = cluster_vcov(&est, design, options.cluster)?;
    est.se = (0..cov.vcov.len()).map(|k| cov.vcov[k][k].max(0.0).sqrt()).collect();
    est.vcov = cov.vcov;
    est.n_clusters = cov.n_clusters;
    est.low_rank = cov.low_rank;
    Ok(est)
}

/// Covariates and fixed effects on `rows`, re-screened for columns the
/// row selection made redundant.
fn restrict(design: &DesignSpec, outcome: &[f64], rows: &[usize]) -> Result<(Problem, Vec<DroppedTerm>)> {
    let dims: Vec<FeDimension> = design.fixed_effects.iter().map(|d| d.subset(rows)).collect();
    let sub_cols: Vec<Vec<f64>> = design
        .columns
        .iter()
        .map(|c| rows.iter().map(|&r| c[r]).collect())
        .collect();
    let unit = vec![1.0; rows.len()];
    let verdicts = screen_columns(&sub_cols, &dims, &unit);
    let mut problem = Problem {
        names: Vec::new(),
        columns: Vec::new(),
        dims,
        y: rows.iter().map(|&r| outcome[r]).collect(),
    };
    let mut dropped_terms = Vec::new();
    for ((name, col), verdict) in design.names.iter().zip(sub_cols).zip(verdicts) {
        match verdict {
            None => {
                problem.names.push(name.clone());
                problem.columns.push(col);
            }
            Some(reason) => dropped_terms.push(DroppedTerm {
                name: name.clone(),
                reason,
            }),
        }
    }
    if problem.columns.is_empty() {
        return Err(GravityError::NothingIdentifiable);
    }
    Ok((problem, dropped_terms))
}

/// Fitted mean, relative to the mean outcome, below which a zero outcome
/// counts as separated when IRLS stalls.
const COLLAPSED_MEAN: f64 = 1e-9;

struct IrlsFit {
    beta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
    failure: Option<GravityError>,
}

fn irls(p: &Problem, options: &FitOptions) -> Result<IrlsFit> {
    let n = p.y.len();
    let k = p.columns.len();
    let demean = DemeanOptions {
        tolerance: options.demean_tolerance,
        ..Default::default()
    };
    let mean_y = p.y.iter().sum::<f64>() / n as f64;
    let mut mu: Vec<f64> = p.y.iter().map(|&y| 0.5 * (y + mean_y)).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta = vec![0.0; k];
    let mut deviance = poisson_deviance(&p.y, &mu);
    let mut history = vec![deviance];

    for iter in 1..=options.max_iterations {
        let z: Vec<f64> = eta
            .iter()
            .zip(&p.y)
            .zip(&mu)
            .map(|((e, y), m)| e + (y - m) / m)
            .collect();
        let absorber = Absorber::new(&p.dims, &mu);
        let mut cols = p.columns.clone();
        cols.push(z.clone());
        let reports = absorber.demean_columns(&mut cols, &demean);
        if reports.iter().any(|r| !r.converged) {
            log::warn!("fixed-effect demeaning hit the sweep limit in IRLS iteration {iter}");
        }
        let z_tilde = cols.pop().expect("working response");

        let xtwx = gram(&cols, &mu);
        let xtwz = DVector::from_iterator(
            k,
            cols.iter().map(|c| c.iter().zip(&z_tilde).zip(&mu).map(|((x, z), w)| x * z * w).sum::<f64>()),
        );
        let Some(chol) = xtwx.cholesky() else {
            let error = GravityError::Singular("weighted cross-product of projected covariates".into());
            if iter == 1 {
                return Err(error);
            }
            // weights can vanish on separated rows; let the caller decide
            return Ok(IrlsFit {
                beta,
                mu,
                deviance,
                history,
                iterations: iter - 1,
                converged: false,
                failure: Some(error),
            });
        };
        let new_beta: Vec<f64> = chol.solve(&xtwz).iter().copied().collect();

        let mut new_eta: Vec<f64> = (0..n)
            .map(|i| {
                let xb: f64 = cols.iter().zip(&new_beta).map(|(c, b)| c[i] * b).sum();
                z[i] - (z_tilde[i] - xb)
            })
            .collect();
        let mut step_beta = new_beta;
        let mut new_mu: Vec<f64> = new_eta.iter().map(|e| e.exp()).collect();
        let mut new_dev = poisson_deviance(&p.y, &new_mu);
        // step halving when the deviance goes up
        let mut halvings = 0;
        while (!new_dev.is_finite() || new_dev > deviance * (1.0 + 1e-12)) && iter > 1 && halvings < 30 {
            for i in 0..n {
                new_eta[i] = 0.5 * (new_eta[i] + eta[i]);
            }
            for (b, old) in step_beta.iter_mut().zip(&beta) {
                *b = 0.5 * (*b + old);
            }
            new_mu = new_eta.iter().map(|e| e.exp()).collect();
            new_dev = poisson_deviance(&p.y, &new_mu);
            halvings += 1;
        }

        if !new_dev.is_finite() {
            return Ok(IrlsFit {
                beta,
                mu,
                deviance,
                history,
                iterations: iter - 1,
                converged: false,
                failure: Some(GravityError::Singular("IRLS step produced non-finite fitted values".into())),
            });
        }

        let coef_ok = step_beta
            .iter()
            .zip(&beta)
            .all(|(b, old)| (b - old).abs() <= options.coef_tolerance * b.abs().max(1.0));
        let dev_ok = (new_dev - deviance).abs() <= options.deviance_tolerance * new_dev.abs().max(0.1);

        beta = step_beta;
        eta = new_eta;
        mu = new_mu;
        deviance = new_dev;
        history.push(deviance);

        // deviance settled while coefficients still drift: separated zeros
        if dev_ok && !coef_ok && iter > 1 && p.y.iter().zip(&mu).any(|(&y, &m)| y == 0.0 && m < COLLAPSED_MEAN * mean_y) {
            return Ok(IrlsFit {
                beta,
                mu,
                deviance,
                history,
                iterations: iter,
                converged: false,
                failure: None,
            });
        }
        if coef_ok && dev_ok && iter > 1 {
            return Ok(IrlsFit {
                beta,
                mu,
                deviance,
                history,
                iterations: iter,
                converged: true,
                failure: None,
            });
        }
    }
    Ok(IrlsFit {
        beta,
        mu,
        deviance,
        history,
        iterations: options.max_iterations,
        converged: false,
        failure: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterCovariance {
    pub vcov: Vec<Vec<f64>>,
    pub n_clusters: usize,
    /// Fewer clusters than coefficients: the meat is rank deficient.
    pub low_rank: bool,
}

/// Sandwich covariance `B M B` with bread `B = (X~' W X~)^-1` over the
/// fixed-effect-projected covariates at the fitted weights, and meat
/// `M = sum_g s_g s_g'` where `s_g` sums the score contributions
/// `x~_i (y_i - mu_i)` of cluster `g`.
pub fn cluster_vcov(estimates: &EstimateSet, design: &DesignSpec, by: ClusterBy) -> Result<ClusterCovariance> {
    let rows = &estimates.retained_rows;
    let all_ids = design.cluster_ids(by)?;
    let ids: Vec<u32> = rows.iter().map(|&r| all_ids[r]).collect();
    let dims: Vec<FeDimension> = design.fixed_effects.iter().map(|d| d.subset(rows)).collect();
    let mut cols = estimates
        .names
        .iter()
        .map(|name| {
            design
                .column(name)
                .map(|c| rows.iter().map(|&r| c[r]).collect::<Vec<f64>>())
                .ok_or_else(|| GravityError::DimensionMismatch(format!("design lacks column '{name}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let w = &estimates.fitted;
    Absorber::new(&dims, w).demean_columns(
        &mut cols,
        &DemeanOptions {
            tolerance: 1e-13,
            ..Default::default()
        },
    );

    let k = cols.len();
    let bread = invert_spd(gram(&cols, w), "bread of the sandwich")?;

    let uniq: BTreeSet<u32> = ids.iter().copied().collect();
    let slot: std::collections::BTreeMap<u32, usize> = uniq.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let mut sums = DMatrix::<f64>::zeros(uniq.len(), k);
    for (i, g) in ids.iter().enumerate() {
        let resid = estimates.outcome[i] - w[i];
        let s = slot[g];
        for (c, col) in cols.iter().enumerate() {
            sums[(s, c)] += col[i] * resid;
        }
    }
    let meat = sums.transpose() * &sums;
    let v = &bread * meat * &bread;
    let n_clusters = uniq.len();
    let low_rank = n_clusters < k;
    if low_rank {
        log::warn!("only {n_clusters} clusters for {k} coefficients; covariance is rank deficient");
    }
    let vcov = (0..k)
        .map(|a| (0..k).map(|b| 0.5 * (v[(a, b)] + v[(b, a)])).collect())
        .collect();
    Ok(ClusterCovariance {
        vcov,
        n_clusters,
        low_rank,
    })
}

/// Percentage trade effect of a dummy coefficient with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentEffect {
    pub percent: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn effect_transform(beta: f64, se: f64) -> PercentEffect {
    const Z: f64 = 1.96;
    PercentEffect {
        percent: 100.0 * beta.exp_m1(),
        lower: 100.0 * (beta - Z * se).exp_m1(),
        upper: 100.0 * (beta + Z * se).exp_m1(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_group_design(n_per: usize) -> (DesignSpec, Vec<f64>) {
        let n = 2 * n_per;
        let x: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i >= n_per))).collect();
        // control mean 2, treated mean 6
        let y: Vec<f64> = (0..n)
            .map(|i| if i < n_per { [1.0, 3.0, 2.0, 2.0][i % 4] } else { [5.0, 7.0, 6.0, 6.0][i % 4] })
            .collect();
        let d = DesignSpec::new(vec!["treated".into()], vec![x], vec![FeDimension::intercept(n)]).unwrap();
        (d, y)
    }

    #[test]
    fn two_group_closed_form() {
        let (d, y) = two_group_design(8);
        let est = fit_ppml(&d, &y, &FitOptions::default()).unwrap();
        assert!((est.beta[0] - 3f64.ln()).abs() < 1e-10, "{}", est.beta[0]);
        assert!(est.dropped_observations.is_empty());
    }

    #[test]
    fn effect_transform_values() {
        let e = effect_transform(0.26, 0.0);
        assert!((e.percent - 29.693).abs() < 1e-3);
        assert_eq!(effect_transform(0.0, 0.1).percent, 0.0);
        assert!((effect_transform(0.21, 0.0).percent - 23.37).abs() < 0.01);
        assert!((effect_transform(0.41, 0.0).percent - 50.68).abs() < 0.01);
        let ci = effect_transform(0.3, 0.1);
        assert!((ci.lower - 100.0 * ((0.3f64 - 0.196).exp() - 1.0)).abs() < 1e-12);
        assert!((ci.upper - 100.0 * ((0.3f64 + 0.196).exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (d, y) = two_group_design(4);
        assert!(matches!(fit_ppml(&d, &y[..5], &FitOptions::default()), Err(GravityError::DimensionMismatch(_))));
        assert!(matches!(fit_ppml(&d, &vec![0.0; 8], &FitOptions::default()), Err(GravityError::AllZeroOutcome)));
        let mut neg = y.clone();
        neg[2] = -1.0;
        assert!(matches!(fit_ppml(&d, &neg, &FitOptions::default()), Err(GravityError::InvalidOutcome { row: 2, .. })));
        let bad = FitOptions { max_iterations: 0, ..Default::default() };
        assert!(fit_ppml(&d, &y, &bad).is_err());
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let (d, y) = two_group_design(4);
        let opts = FitOptions { max_iterations: 1, ..Default::default() };
        match fit_ppml(&d, &y, &opts) {
            Err(GravityError::NotConverged { last_beta, deviance_history, .. }) => {
                assert_eq!(last_beta.len(), 1);
                assert_eq!(deviance_history.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_groups_are_dropped() {
        // group 2 has only zero outcomes
        let g = FeDimension::from_ids("g", &[0, 0, 0, 1, 1, 1, 2, 2]);
        let x = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let y = vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0, 0.0, 0.0];
        let d = DesignSpec::new(vec!["x".into()], vec![x], vec![g]).unwrap();
        let est = fit_ppml(&d, &y, &FitOptions::default()).unwrap();
        assert_eq!(est.retained_rows, vec![0, 1, 2, 3, 4, 5]);
        assert!(est
            .dropped_observations
            .iter()
            .all(|o| o.reason == ObservationDropReason::ZeroGroup("g".into())));
    }

    #[test]
    fn covariate_separation_is_dropped() {
        let x = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let z = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let y = vec![2.0, 3.0, 1.0, 4.0, 0.0, 0.0];
        let d = DesignSpec::new(vec!["x".into(), "z".into()], vec![x, z], vec![FeDimension::intercept(6)]).unwrap();
        let est = fit_ppml(&d, &y, &FitOptions::default()).unwrap();
        assert_eq!(est.retained_rows, vec![0, 1, 2, 3]);
        assert_eq!(est.names, vec!["z"]);
        assert_eq!(est.dropped_terms[0].name, "x");
    }

    #[test]
    fn separation_through_fixed_effects_is_refitted() {
        // x - 1[g=0] - 1[h=0] + 1[h=1] is zero on every positive outcome
        // and negative on row 0
        let g = FeDimension::from_ids("g", &[0, 0, 1, 1, 2, 2, 3, 3]);
        let h = FeDimension::from_ids("h", &[0, 1, 0, 1, 0, 1, 0, 1]);
        let x = vec![0.0, 0.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let z = vec![0.3, 1.2, 0.5, 2.0, 1.1, 0.2, 0.7, 1.5];
        let y = vec![0.0, 3.0, 4.0, 7.0, 2.0, 5.0, 6.0, 9.0];
        let d = DesignSpec::new(vec!["x".into(), "z".into()], vec![x, z], vec![g, h]).unwrap();
        let est = fit_ppml(&d, &y, &FitOptions::default()).unwrap();
        assert_eq!(est.retained_rows, vec![2, 3, 4, 5, 6, 7]);
        assert!(est
            .dropped_observations
            .contains(&DroppedObservation { row: 0, reason: ObservationDropReason::FittedToZero }));
        assert_eq!(est.names, vec!["z"]);
        assert!(est.beta[0].is_finite() && est.beta[0].abs() < 10.0);
    }

    #[test]
    fn one_observation_per_cluster_is_hc0() {
        let (d, y) = two_group_design(8);
        let est = fit_ppml(&d, &y, &FitOptions::default()).unwrap();
        // with an intercept the treated coefficient is a difference of log
        // means; HC0 variance = sum (y-mu)^2 / (sum mu)^2 per group
        let var_group = |lo: usize, hi: usize| {
            let m: f64 = est.fitted[lo..hi].iter().sum();
            let s: f64 = (lo..hi).map(|i| (est.outcome[i] - est.fitted[i]).powi(2)).sum();
            s / (m * m)
        };
        let expected = var_group(0, 8) + var_group(8, 16);
        assert!((est.vcov[0][0] - expected).abs() < 1e-12, "{} vs {}", est.vcov[0][0], expected);
        assert_eq!(est.n_clusters, 16);
    }
}
