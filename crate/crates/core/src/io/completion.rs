use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GravityError, Result};
use crate::ge::TradeMatrix;
use crate::panel::{Country, PanelObservation};

/// What [`complete_matrix`] had to fill in. Cells are counted over the
/// processed span `[first panel year, window end]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub window: (i32, i32),
    /// Missing first-year values, plus every cell of fully missing pairs.
    pub zero_filled: usize,
    pub interpolated: usize,
    /// Trailing gaps carried forward from the last observation.
    pub extrapolated: usize,
    pub missing_pairs: Vec<(Country, Country)>,
}

impl CompletionReport {
    pub fn cells_touched(&self) -> usize {
        self.zero_filled + self.interpolated + self.extrapolated
    }
}

/// Builds the complete square baseline matrix averaged over `window`.
///
/// Per directed pair: a missing value in the first panel year is set to
/// zero, interior gaps are interpolated linearly in levels, trailing gaps
/// carry the last observation forward. The diagonal is filled the same way
/// when the observations include domestic trade, and left at zero otherwise.
pub fn complete_matrix(observations: &[PanelObservation], window: (i32, i32)) -> Result<(TradeMatrix, CompletionReport)> {
    if observations.is_empty() {
        return Err(GravityError::Config("no observations to complete".into()));
    }
    let first = observations.iter().map(|o| o.year).min().expect("nonempty");
    let last = observations.iter().map(|o| o.year).max().expect("nonempty");
    if window.0 > window.1 || window.0 < first || window.1 > last {
        return Err(GravityError::Config(format!(
            "averaging window {}:{} is outside the panel years {first}:{last}",
            window.0, window.1
        )));
    }

    let countries: Vec<Country> = observations
        .iter()
        .flat_map(|o| [o.exporter.clone(), o.importer.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let has_domestic = observations.iter().any(PanelObservation::is_domestic);
    let index: BTreeMap<&Country, usize> = countries.iter().enumerate().map(|(i, c)| (c, i)).collect();

    let mut series: BTreeMap<(usize, usize), BTreeMap<i32, f64>> = BTreeMap::new();
    for o in observations {
        series
            .entry((index[&o.exporter], index[&o.importer]))
            .or_default()
            .insert(o.year, o.flow);
    }

    let n = countries.len();
    let span = (window.1 - window.0 + 1) as f64;
    let mut report = CompletionReport {
        window,
        ..Default::default()
    };
    let mut flows = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j && !has_domestic {
                continue;
            }
            let Some(observed) = series.get(&(i, j)) else {
                report.zero_filled += (window.1 - first + 1) as usize;
                report.missing_pairs.push((countries[i].clone(), countries[j].clone()));
                continue;
            };
            let mut points = observed.clone();
            if !points.contains_key(&first) {
                points.insert(first, 0.0);
                report.zero_filled += 1;
            }
            let mut total = 0.0;
            for year in first..=window.1 {
                let value = match points.get(&year) {
                    Some(&v) => v,
                    None => {
                        let (&y0, &v0) = points.range(..year).next_back().expect("first year is filled");
                        match points.range(year + 1..).next() {
                            Some((&y1, &v1)) => {
                                report.interpolated += 1;
                                v0 + (v1 - v0) * f64::from(year - y0) / f64::from(y1 - y0)
                            }
                            None => {
                                report.extrapolated += 1;
                                v0
                            }
                        }
                    }
                };
                if year >= window.0 {
                    total += value;
                }
            }
            flows[(i, j)] = total / span;
        }
    }
    let matrix = TradeMatrix::new(countries, flows)?;
    Ok((matrix, report))
}
