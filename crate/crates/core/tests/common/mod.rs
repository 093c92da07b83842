//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the absorption or IRLS code paths.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use gravity_core::design::DesignSpec;
use gravity_core::panel::Country;
use nalgebra::{DMatrix, DVector};

/// Rows surviving the all-zero-group and covariate-separation screen.
pub fn oracle_rows(design: &DesignSpec, y: &[f64]) -> Vec<usize> {
    let n = y.len();
    let mut keep = vec![true; n];
    loop {
        let mut changed = false;
        for dim in &design.fixed_effects {
            let mut sum: HashMap<u32, f64> = HashMap::new();
            for r in 0..n {
                if keep[r] {
                    *sum.entry(dim.ids[r]).or_default() += y[r];
                }
            }
            for r in 0..n {
                if keep[r] && sum[&dim.ids[r]] == 0.0 {
                    keep[r] = false;
                    changed = true;
                }
            }
        }
        for col in &design.columns {
            let support: Vec<usize> = (0..n).filter(|&r| keep[r] && col[r] > 0.0).collect();
            let active = keep.iter().filter(|k| **k).count();
            if !support.is_empty() && support.len() < active && support.iter().all(|&r| y[r] == 0.0) {
                for r in support {
                    keep[r] = false;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|&r| keep[r]).collect()
}

/// Dense dummy block for the fixed effects on `rows` (one column per group
/// present).
pub fn dummy_columns(design: &DesignSpec, rows: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for dim in &design.fixed_effects {
        let mut groups: Vec<u32> = rows.iter().map(|&r| dim.ids[r]).collect();
        groups.sort_unstable();
        groups.dedup();
        for g in groups {
            out.push(rows.iter().map(|&r| f64::from(u8::from(dim.ids[r] == g))).collect());
        }
    }
    out
}

/// Greedy Gram-Schmidt column selection: indices of columns not spanned by
/// earlier kept ones.
pub fn independent(columns: &[Vec<f64>]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (k, c) in columns.iter().enumerate() {
        let n0 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n0 == 0.0 {
            continue;
        }
        let mut q = c.clone();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = q.iter().zip(b).map(|(x, y)| x * y).sum();
                q.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 * n0 {
            q.iter_mut().for_each(|x| *x /= n);
            basis.push(q);
            kept.push(k);
        }
    }
    kept
}

pub struct DenseFit {
    pub coefficients: BTreeMap<String, f64>,
    pub rows: Vec<usize>,
    pub iterations: usize,
}

/// Newton-Raphson on the Poisson log-likelihood with every fixed effect as
/// an explicit dummy column.
pub fn dense_newton(design: &DesignSpec, y: &[f64]) -> DenseFit {
    let rows = oracle_rows(design, y);
    let m = rows.len();
    let mut cols = dummy_columns(design, &rows);
    let n_dummies = cols.len();
    for c in &design.columns {
        cols.push(rows.iter().map(|&r| c[r]).collect());
    }
    let keep = independent(&cols);
    let p = keep.len();
    let x = DMatrix::from_fn(m, p, |i, k| cols[keep[k]][i]);
    let yv = DVector::from_iterator(m, rows.iter().map(|&r| y[r]));

    // start from least squares on log((y + mean) / 2)
    let mean = yv.mean();
    let start = DVector::from_iterator(m, yv.iter().map(|v| (0.5 * (v + mean)).ln()));
    let xtx = x.transpose() * &x;
    let mut b = xtx.cholesky().expect("full rank").solve(&(x.transpose() * start));

    let loglik = |b: &DVector<f64>| -> f64 {
        let eta = &x * b;
        eta.iter().zip(yv.iter()).map(|(e, y)| y * e - e.exp()).sum()
    };
    let mut ll = loglik(&b);
    let mut iterations = 0;
    for it in 1..=500 {
        iterations = it;
        let eta = &x * &b;
        let mu = eta.map(f64::exp);
        let grad = x.transpose() * (&yv - &mu);
        let xw = DMatrix::from_fn(m, p, |i, k| x[(i, k)] * mu[i]);
        let hess = x.transpose() * xw;
        let step = hess.cholesky().expect("hessian positive definite").solve(&grad);
        let mut t = 1.0;
        let mut cand = &b + &step * t;
        let mut cand_ll = loglik(&cand);
        while cand_ll < ll - 1e-12 * ll.abs() && t > 1e-10 {
            t *= 0.5;
            cand = &b + &step * t;
            cand_ll = loglik(&cand);
        }
        b = cand;
        ll = cand_ll;
        if step.amax() * t < 1e-13 {
            break;
        }
    }

    let mut coefficients = BTreeMap::new();
    for (k, &c) in keep.iter().enumerate() {
        if c >= n_dummies {
            coefficients.insert(design.names[c - n_dummies].clone(), b[k]);
        }
    }
    DenseFit {
        coefficients,
        rows,
        iterations,
    }
}

/// Sandwich for the full parameter vector (covariates plus independent
/// dummies) assembled from explicit per-cluster score sums; returns the
/// covariate block in the order of `names`.
pub fn brute_force_sandwich(
    design: &DesignSpec,
    names: &[String],
    rows: &[usize],
    outcome: &[f64],
    fitted: &[f64],
    clusters: &[u32],
) -> DMatrix<f64> {
    let m = rows.len();
    let mut cols = dummy_columns(design, rows);
    let dummy_keep = independent(&cols);
    let mut kept: Vec<Vec<f64>> = dummy_keep.iter().map(|&k| cols[k].clone()).collect();
    let n_d = kept.len();
    for name in names {
        let c = design.column(name).expect("column");
        kept.push(rows.iter().map(|&r| c[r]).collect());
    }
    cols.clear();
    let p = kept.len();
    let x = DMatrix::from_fn(m, p, |i, k| kept[k][i]);
    let xw = DMatrix::from_fn(m, p, |i, k| x[(i, k)] * fitted[i]);
    let hess = x.transpose() * xw;
    let hinv = hess.try_inverse().expect("invertible hessian");

    let mut by_cluster: BTreeMap<u32, DVector<f64>> = BTreeMap::new();
    for i in 0..m {
        let g = clusters[rows[i]];
        let s = by_cluster.entry(g).or_insert_with(|| DVector::zeros(p));
        for k in 0..p {
            s[k] += x[(i, k)] * (outcome[i] - fitted[i]);
        }
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in by_cluster.values() {
        meat += s * s.transpose();
    }
    let full = &hinv * meat * &hinv;
    let k = names.len();
    DMatrix::from_fn(k, k, |a, b| full[(n_d + a, n_d + b)])
}

/// Two-country wage solution by bisection on the relative wage.
pub struct TwoCountry {
    pub w_hat: [f64; 2],
    pub lambda_hat: [[f64; 2]; 2],
    pub g_hat: [f64; 2],
}

pub fn two_country_bisection(x: [[f64; 2]; 2], tau_hat: [[f64; 2]; 2], theta: f64, multiplicative: bool) -> TwoCountry {
    let y = [x[0][0] + x[0][1], x[1][0] + x[1][1]];
    let e = [x[0][0] + x[1][0], x[0][1] + x[1][1]];
    let world = y[0] + y[1];
    let lam = |i: usize, j: usize| x[i][j] / e[j];

    let wages = |omega: f64| {
        let w2 = world / (y[0] * omega + y[1]);
        [omega * w2, w2]
    };
    let shares = |w: [f64; 2]| {
        let mut lh = [[0.0; 2]; 2];
        for j in 0..2 {
            let p: f64 = (0..2).map(|k| lam(k, j) * (w[k] * tau_hat[k][j]).powf(-theta)).sum();
            for i in 0..2 {
                lh[i][j] = (w[i] * tau_hat[i][j]).powf(-theta) / p;
            }
        }
        lh
    };
    let excess = |omega: f64| {
        let w = wages(omega);
        let lh = shares(w);
        let ep = |j: usize| {
            if multiplicative {
                let spend = e[0] * w[0] + e[1] * w[1];
                e[j] * w[j] * world / spend
            } else {
                y[j] * w[j] + (e[j] - y[j])
            }
        };
        let sales: f64 = (0..2).map(|j| lam(0, j) * lh[0][j] * ep(j)).sum();
        sales - y[0] * w[0]
    };

    let (mut lo, mut hi) = (1e-3f64.ln(), 1e3f64.ln());
    assert!(excess(lo.exp()) > 0.0 && excess(hi.exp()) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = wages((0.5 * (lo + hi)).exp());
    let lh = shares(w);
    TwoCountry {
        w_hat: w,
        lambda_hat: lh,
        g_hat: [lh[0][0].powf(-1.0 / theta), lh[1][1].powf(-1.0 / theta)],
    }
}

pub fn labels(n: usize) -> Vec<Country> {
    (0..n).map(|i| Country::new(format!("C{i:02}"))).collect()
}
