//! Row-level bootstrap for the variance of singleton Fleiss kappa.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::metrics::AgreementSums;
use crate::model::ContingencyTable;
use crate::seed;

/// Number of resamples used when the caller does not choose one.
pub const DEFAULT_ITERATIONS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub variance: f64,
    /// 2.5th and 97.5th percentiles of the non-degenerate draws.
    pub percentile_ci: (f64, f64),
    pub iterations: usize,
    pub seed: u64,
    pub degenerate_draws: usize,
}

/// Resamples whole rows with replacement and recomputes kappa_S.
///
/// Iteration `i` draws from a stream keyed by `(seed, i)`, so the result
/// does not depend on how rayon schedules the work. A duplicated row keeps
/// its singletons distinct: each occurrence is still a one-off category.
pub fn bootstrap_kappa_variance(
    table: &ContingencyTable,
    iterations: usize,
    seed: u64,
) -> Result<BootstrapResult, MetricError> {
    if iterations == 0 {
        return Err(MetricError::NoIterations);
    }
    let rows = table.rows();
    let raters = table.raters();
    let draws: Vec<Option<f64>> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(seed, &["bootstrap", &i.to_string()]);
            let picks = (0..rows.len()).map(|_| &rows[rng.gen_range(0..rows.len())]);
            AgreementSums::from_rows(picks, raters).kappa_singleton().value()
        })
        .collect();

    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let degenerate_draws = iterations - values.len();
    if values.is_empty() {
        return Err(MetricError::AllDegenerate(iterations));
    }
    let variance = sample_variance(&values);
    values.sort_by(f64::total_cmp);
    let percentile_ci = (percentile(&values, 0.025), percentile(&values, 0.975));
    Ok(BootstrapResult {
        variance,
        percentile_ci,
        iterations,
        seed,
        degenerate_draws,
    })
}

/// Unbiased sample variance; zero for fewer than two values.
fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).max(0.0)
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
