//! Exact hat algebra counterfactuals for a labor-only structural gravity
//! model.
//!
//! Given a complete baseline matrix `X` (rows exporters, columns importers,
//! diagonal domestic) and proportional trade-cost changes `tau_hat`, the
//! solver finds wage changes `w_hat` such that
//!
//! ```text
//! lambda_hat_ij = w_hat_i^-theta tau_hat_ij^-theta / P_j,
//! P_j           = sum_k lambda_kj w_hat_k^-theta tau_hat_kj^-theta,
//! Y_i w_hat_i   = sum_j lambda_ij lambda_hat_ij E'_j,
//! ```
//!
//! with `E'_j` proportional to `E_j w_hat_j` and summing to world output
//! (multiplicative deficits) or `E'_j = Y_j w_hat_j + D_j` (additive
//! deficits), normalised so that world nominal output is unchanged.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GravityError, Result};
use crate::panel::Country;

/// Complete square baseline flow matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TradeMatrix {
    labels: Vec<Country>,
    flows: DMatrix<f64>,
}

impl TradeMatrix {
    pub fn new(labels: Vec<Country>, flows: DMatrix<f64>) -> Result<Self> {
        let n = labels.len();
        if flows.nrows() != n || flows.ncols() != n {
            return Err(GravityError::InvalidMatrix(format!(
                "{}x{} flows for {n} labels",
                flows.nrows(),
                flows.ncols()
            )));
        }
        if labels.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(GravityError::InvalidMatrix("duplicate country labels".into()));
        }
        if let Some(v) = flows.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(GravityError::InvalidMatrix(format!("invalid flow {v}")));
        }
        for j in 0..n {
            if flows.column(j).sum() <= 0.0 {
                return Err(GravityError::ZeroColumn(labels[j].to_string()));
            }
        }
        Ok(TradeMatrix { labels, flows })
    }

    pub fn from_rows(labels: Vec<Country>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = labels.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(GravityError::InvalidMatrix("matrix is not square".into()));
        }
        Self::new(labels, DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn labels(&self) -> &[Country] {
        &self.labels
    }

    pub fn flows(&self) -> &DMatrix<f64> {
        &self.flows
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, c: &Country) -> Option<usize> {
        self.labels.iter().position(|l| l == c)
    }

    /// Production `Y_i` (row sums).
    pub fn output(&self) -> Vec<f64> {
        self.flows.row_iter().map(|r| r.sum()).collect()
    }

    /// Expenditure `E_j` (column sums).
    pub fn expenditure(&self) -> Vec<f64> {
        self.flows.column_iter().map(|c| c.sum()).collect()
    }

    pub fn world_output(&self) -> f64 {
        self.flows.sum()
    }

    /// `D_j = E_j - Y_j`.
    pub fn deficits(&self) -> Vec<f64> {
        self.expenditure()
            .into_iter()
            .zip(self.output())
            .map(|(e, y)| e - y)
            .collect()
    }

    /// Import shares `lambda_ij = X_ij / E_j`.
    pub fn shares(&self) -> DMatrix<f64> {
        let e = self.expenditure();
        DMatrix::from_fn(self.len(), self.len(), |i, j| self.flows[(i, j)] / e[j])
    }

    pub fn scaled(&self, k: f64) -> Self {
        TradeMatrix {
            labels: self.labels.clone(),
            flows: &self.flows * k,
        }
    }

    /// Exports plus imports excluding the diagonal.
    pub fn international_trade(&self) -> Vec<f64> {
        international_trade(&self.flows)
    }
}

fn international_trade(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| x[(i, j)] + x[(j, i)]).sum())
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeficitConvention {
    /// Nominal deficits held constant.
    Additive,
    /// Deficits scale with income.
    #[default]
    Multiplicative,
}

impl std::str::FromStr for DeficitConvention {
    type Err = GravityError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "additive" => Ok(DeficitConvention::Additive),
            "multiplicative" => Ok(DeficitConvention::Multiplicative),
            other => Err(GravityError::Config(format!("unknown deficit convention '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Members leave the union: intra-union costs rise.
    Leave,
    /// Members form the union: intra-union costs fall.
    Join,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverControls {
    pub damping: f64,
    /// Convergence threshold on the largest change in `w_hat` per sweep.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverControls {
    fn default() -> Self {
        SolverControls {
            damping: 0.5,
            tolerance: 1e-12,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualSpec {
    pub tau_hat: DMatrix<f64>,
    pub theta: f64,
    pub deficit: DeficitConvention,
    pub controls: SolverControls,
}

impl CounterfactualSpec {
    pub fn new(tau_hat: DMatrix<f64>, theta: f64) -> Self {
        CounterfactualSpec {
            tau_hat,
            theta,
            deficit: DeficitConvention::default(),
            controls: SolverControls::default(),
        }
    }

    pub fn with_deficit(mut self, deficit: DeficitConvention) -> Self {
        self.deficit = deficit;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(GravityError::Config(format!("trade elasticity must be positive, got {}", self.theta)));
        }
        if self.tau_hat.nrows() != n || self.tau_hat.ncols() != n {
            return Err(GravityError::DimensionMismatch(format!(
                "tau_hat is {}x{}, baseline has {n} countries",
                self.tau_hat.nrows(),
                self.tau_hat.ncols()
            )));
        }
        if self.tau_hat.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(GravityError::Config("tau_hat must be positive".into()));
        }
        let c = &self.controls;
        if !(c.damping > 0.0 && c.damping <= 1.0) {
            return Err(GravityError::Config(format!("damping must lie in (0, 1], got {}", c.damping)));
        }
        if !(c.tolerance > 0.0) || c.max_iterations == 0 {
            return Err(GravityError::Config("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Trade-cost changes for a union scenario: `exp(-beta/theta)` between
/// distinct members when they leave, `exp(beta/theta)` when they join, and 1
/// elsewhere.
pub fn build_tau_hat(
    beta: f64,
    theta: f64,
    members: &BTreeSet<Country>,
    labels: &[Country],
    direction: Direction,
) -> Result<DMatrix<f64>> {
    if !(theta > 0.0) {
        return Err(GravityError::Config(format!("trade elasticity must be positive, got {theta}")));
    }
    if let Some(missing) = members.iter().find(|m| !labels.contains(m)) {
        return Err(GravityError::UnknownCountry(missing.to_string()));
    }
    let n = labels.len();
    if members.is_empty() {
        log::warn!("empty member set; trade costs unchanged");
        return Ok(DMatrix::from_element(n, n, 1.0));
    }
    let sign = match direction {
        Direction::Leave => -1.0,
        Direction::Join => 1.0,
    };
    let factor = (sign * beta / theta).exp();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i != j && members.contains(&labels[i]) && members.contains(&labels[j]) {
            factor
        } else {
            1.0
        }
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualResult {
    pub labels: Vec<Country>,
    /// Income (= wage) changes.
    pub w_hat: Vec<f64>,
    pub lambda_hat: DMatrix<f64>,
    /// Counterfactual shares `lambda_ij * lambda_hat_ij`.
    pub lambda_prime: DMatrix<f64>,
    pub x_prime: DMatrix<f64>,
    pub expenditure_prime: Vec<f64>,
    /// Inward multilateral resistance changes.
    pub pi_hat: Vec<f64>,
    /// Welfare changes `lambda_hat_ii^(-1/theta)`.
    pub g_hat: Vec<f64>,
    pub theta: f64,
    pub iterations: usize,
    /// Largest |Y_i w_hat_i - sum_j X'_ij| relative to world output.
    pub clearing_residual: f64,
    pub residual_trace: Vec<f64>,
}

struct Evaluation {
    /// `lambda_ij tau_hat_ij^-theta w_hat_i^-theta` before dividing by `P_j`.
    numer: DMatrix<f64>,
    p: Vec<f64>,
    e_prime: Vec<f64>,
    demand: Vec<f64>,
}

struct Baseline {
    lambda: DMatrix<f64>,
    y: Vec<f64>,
    e: Vec<f64>,
    d: Vec<f64>,
    world: f64,
}

fn evaluate(base: &Baseline, a: &DMatrix<f64>, w: &[f64], theta: f64, deficit: DeficitConvention, labels: &[Country]) -> Result<Evaluation> {
    let n = w.len();
    let wpow: Vec<f64> = w.iter().map(|x| x.powf(-theta)).collect();
    let numer = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * wpow[i]);
    let p: Vec<f64> = numer.column_iter().map(|c| c.sum()).collect();
    if let Some(j) = p.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(GravityError::ZeroColumn(labels[j].to_string()));
    }
    let e_prime: Vec<f64> = match deficit {
        DeficitConvention::Multiplicative => {
            // deficits move with income; rescaled so world spending still
            // equals world output
            let income: f64 = w.iter().zip(&base.y).map(|(a, b)| a * b).sum();
            let spending: f64 = w.iter().zip(&base.e).map(|(a, b)| a * b).sum();
            (0..n).map(|j| base.e[j] * w[j] * income / spending).collect()
        }
        DeficitConvention::Additive => (0..n).map(|j| base.y[j] * w[j] + base.d[j]).collect(),
    };
    let demand = (0..n)
        .map(|i| (0..n).map(|j| numer[(i, j)] / p[j] * e_prime[j]).sum())
        .collect();
    Ok(Evaluation { numer, p, e_prime, demand })
}

fn normalise(w: &mut [f64], y: &[f64], world: f64) {
    let total: f64 = w.iter().zip(y).map(|(a, b)| a * b).sum();
    let s = world / total;
    w.iter_mut().for_each(|x| *x *= s);
}

/// Solves the wage fixed point and recovers shares, flows, inward
/// resistance and welfare.
///
/// Each sweep maps `w_hat_i` to
/// `(sum_j lambda_ij tau_hat_ij^-theta E'_j / P_j / Y_i)^(1/(1+theta))`,
/// which has the same fixed points as the market-clearing condition, then
/// damps, renormalises, and halves the damping whenever the update starts
/// to grow.
pub fn solve_counterfactual(baseline: &TradeMatrix, spec: &CounterfactualSpec) -> Result<CounterfactualResult> {
    let n = baseline.len();
    spec.validate(n)?;
    let theta = spec.theta;
    let y = baseline.output();
    if let Some(i) = y.iter().position(|v| !(*v > 0.0)) {
        return Err(GravityError::InvalidMatrix(format!(
            "{} has zero output; the wage fixed point is undefined",
            baseline.labels[i]
        )));
    }
    let base = Baseline {
        lambda: baseline.shares(),
        e: baseline.expenditure(),
        d: baseline.deficits(),
        world: y.iter().sum(),
        y,
    };
    let a = DMatrix::from_fn(n, n, |i, j| base.lambda[(i, j)] * spec.tau_hat[(i, j)].powf(-theta));

    let mut w = vec![1.0; n];
    let mut damping = spec.controls.damping;
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut growth_streak = 0;
    let mut converged_at = None;

    for iter in 1..=spec.controls.max_iterations {
        let ev = evaluate(&base, &a, &w, theta, spec.deficit, &baseline.labels)?;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                let target = ev.demand[i] * w[i].powf(theta) / base.y[i];
                let proposal = target.powf(1.0 / (1.0 + theta));
                (1.0 - damping) * w[i] + damping * proposal
            })
            .collect();
        normalise(&mut next, &base.y, base.world);
        let change = next
            .iter()
            .zip(&w)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        w = next;
        trace.push(change);
        if change <= spec.controls.tolerance {
            converged_at = Some(iter);
            break;
        }
        if change > last_change {
            growth_streak += 1;
            if growth_streak >= 3 {
                damping *= 0.5;
                growth_streak = 0;
                log::debug!("oscillation detected; damping reduced to {damping}");
            }
        } else {
            growth_streak = 0;
        }
        last_change = change;
    }
    let Some(iterations) = converged_at else {
        return Err(GravityError::SolverNotConverged {
            iterations: spec.controls.max_iterations,
            residual_trace: trace,
        });
    };

    let ev = evaluate(&base, &a, &w, theta, spec.deficit, &baseline.labels)?;
    let lambda_hat = DMatrix::from_fn(n, n, |i, j| {
        w[i].powf(-theta) * spec.tau_hat[(i, j)].powf(-theta) / ev.p[j]
    });
    let lambda_prime = DMatrix::from_fn(n, n, |i, j| ev.numer[(i, j)] / ev.p[j]);
    let x_prime = DMatrix::from_fn(n, n, |i, j| lambda_prime[(i, j)] * ev.e_prime[j]);
    let clearing_residual = (0..n)
        .map(|i| (base.y[i] * w[i] - ev.demand[i]).abs())
        .fold(0.0f64, f64::max)
        / base.world;
    let pi_hat = ev.p.iter().map(|p| p.powf(-1.0 / theta)).collect();
    let g_hat = (0..n).map(|i| lambda_hat[(i, i)].powf(-1.0 / theta)).collect();

    Ok(CounterfactualResult {
        labels: baseline.labels.clone(),
        w_hat: w,
        lambda_hat,
        lambda_prime,
        x_prime,
        expenditure_prime: ev.e_prime,
        pi_hat,
        g_hat,
        theta,
        iterations,
        clearing_residual,
        residual_trace: trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub country: Country,
    pub member: bool,
    /// Baseline exports plus imports, excluding domestic trade.
    pub baseline_trade: f64,
    pub counterfactual_trade: f64,
    /// Counterfactual minus baseline, in currency units.
    pub level: f64,
    /// `level` as a percentage of baseline international trade.
    pub percent: f64,
}

/// Trade attributable to the union per country, from a leave-direction
/// counterfactual. Leaving and joining are taken as mirror images, so the
/// trade change produced by the leave rule's cost shift is read as the
/// union's contribution. Members come first, then non-members, each in
/// label order.
pub fn attribute_union_trade(
    baseline: &TradeMatrix,
    result: &CounterfactualResult,
    members: &BTreeSet<Country>,
) -> Result<Vec<AttributionRow>> {
    if let Some(m) = members.iter().find(|m| baseline.index_of(m).is_none()) {
        return Err(GravityError::UnknownCountry(m.to_string()));
    }
    if result.labels != baseline.labels {
        return Err(GravityError::DimensionMismatch("result labels differ from baseline".into()));
    }
    let before = baseline.international_trade();
    let after = international_trade(&result.x_prime);
    let mut rows: Vec<AttributionRow> = baseline
        .labels
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let level = after[i] - before[i];
            AttributionRow {
                country: c.clone(),
                member: members.contains(c),
                baseline_trade: before[i],
                counterfactual_trade: after[i],
                level,
                percent: if before[i] > 0.0 { 100.0 * level / before[i] } else { 0.0 },
            }
        })
        .collect();
    rows.sort_by_key(|r| !r.member);
    Ok(rows)
}
