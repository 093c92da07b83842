//! Fixed-effect absorption by iterated weighted demeaning (alternating
//! projections over every fixed-effect dimension).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One fixed-effect dimension: a dense group id per observation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeDimension {
    pub name: String,
    pub ids: Vec<u32>,
    pub n_groups: usize,
}

impl FeDimension {
    /// Builds a dimension from arbitrary ids, relabelling them densely in
    /// ascending order of the original id.
    pub fn from_ids(name: impl Into<String>, ids: &[u32]) -> Self {
        let mut uniq: Vec<u32> = ids.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let dense = ids
            .iter()
            .map(|id| uniq.binary_search(id).expect("id present") as u32)
            .collect();
        FeDimension {
            name: name.into(),
            ids: dense,
            n_groups: uniq.len(),
        }
    }

    /// A single group spanning every observation (an intercept).
    pub fn intercept(n: usize) -> Self {
        FeDimension {
            name: "intercept".into(),
            ids: vec![0; n],
            n_groups: usize::from(n > 0),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Restriction to `rows`, with group ids re-densified.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let ids: Vec<u32> = rows.iter().map(|&r| self.ids[r]).collect();
        FeDimension::from_ids(self.name.clone(), &ids)
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_groups];
        for &g in &self.ids {
            counts[g as usize] += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DemeanOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for DemeanOptions {
    fn default() -> Self {
        DemeanOptions {
            tolerance: 1e-10,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DemeanReport {
    pub sweeps: usize,
    pub converged: bool,
}

/// Weighted projector onto the orthogonal complement of the fixed-effect
/// dummies. Group weight totals are computed once per weight vector.
pub struct Absorber<'a> {
    dims: &'a [FeDimension],
    weights: &'a [f64],
    inv_group_weight: Vec<Vec<f64>>,
}

impl<'a> Absorber<'a> {
    pub fn new(dims: &'a [FeDimension], weights: &'a [f64]) -> Self {
        let inv_group_weight = dims
            .iter()
            .map(|d| {
                let mut tot = vec![0.0; d.n_groups];
                for (&g, &w) in d.ids.iter().zip(weights) {
                    tot[g as usize] += w;
                }
                tot.into_iter()
                    .map(|t| if t > 0.0 { 1.0 / t } else { 0.0 })
                    .collect()
            })
            .collect();
        Absorber {
            dims,
            weights,
            inv_group_weight,
        }
    }

    /// Demeans `v` in place. Stops when the largest group-mean correction of a
    /// full sweep falls below `tolerance` times the column scale.
    pub fn demean(&self, v: &mut [f64], options: &DemeanOptions) -> DemeanReport {
        if self.dims.is_empty() {
            return DemeanReport {
                sweeps: 0,
                converged: true,
            };
        }
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let mut sums: Vec<Vec<f64>> = self.dims.iter().map(|d| vec![0.0; d.n_groups]).collect();
        for sweep in 1..=options.max_sweeps {
            let mut max_change = 0.0f64;
            for (k, dim) in self.dims.iter().enumerate() {
                let acc = &mut sums[k];
                acc.iter_mut().for_each(|s| *s = 0.0);
                for ((&g, &x), &w) in dim.ids.iter().zip(v.iter()).zip(self.weights) {
                    acc[g as usize] += w * x;
                }
                for (s, &inv) in acc.iter_mut().zip(&self.inv_group_weight[k]) {
                    *s *= inv;
                    max_change = max_change.max(s.abs());
                }
                for (x, &g) in v.iter_mut().zip(&dim.ids) {
                    *x -= acc[g as usize];
                }
            }
            if self.dims.len() == 1 || max_change <= options.tolerance * scale {
                return DemeanReport {
                    sweeps: sweep,
                    converged: true,
                };
            }
        }
        DemeanReport {
            sweeps: options.max_sweeps,
            converged: false,
        }
    }

    /// Demeans several columns in parallel; output order matches input.
    pub fn demean_columns(&self, columns: &mut [Vec<f64>], options: &DemeanOptions) -> Vec<DemeanReport> {
        columns
            .par_iter_mut()
            .map(|c| self.demean(c, options))
            .collect()
    }
}
