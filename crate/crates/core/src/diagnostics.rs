//! Randomized probability integral transform for count models.

use crate::distribution::{CmpParams, DistError};
use crate::fit::FittedModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("model has {expected} observations but {got} responses were given")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Distribution(#[from] DistError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PitSample {
    pub values: Vec<f64>,
    pub seed: u64,
    pub ks_statistic: f64,
}

/// `F(y - 1) + v p(y)` with `F(-1) = 0`.
pub fn randomized_pit(params: &CmpParams, y: u64, v: f64) -> f64 {
    let below = if y == 0 { 0.0 } else { params.cdf(y - 1) };
    (below + v * params.pmf(y)).clamp(0.0, 1.0)
}

/// Randomized PIT for explicit per-observation parameters.
pub fn pit_values(
    mu: &[f64],
    nu: &[f64],
    y: &[u64],
    seed: u64,
) -> Result<PitSample, DiagnosticsError> {
    for len in [mu.len(), nu.len()] {
        if len != y.len() {
            return Err(DiagnosticsError::LengthMismatch {
                expected: len,
                got: y.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..y.len()).map(|_| rng.random::<f64>()).collect();
    let values = (0..y.len())
        .into_par_iter()
        .map(|i| Ok(randomized_pit(&CmpParams::new(mu[i], nu[i])?, y[i], v[i])))
        .collect::<Result<Vec<f64>, DistError>>()?;
    Ok(PitSample {
        ks_statistic: ks_statistic(&values),
        values,
        seed,
    })
}

/// Randomized PIT of `y` under a fitted model's per-observation means and dispersions.
pub fn pit(model: &FittedModel, y: &[u64], seed: u64) -> Result<PitSample, DiagnosticsError> {
    if model.n_obs != y.len() {
        return Err(DiagnosticsError::LengthMismatch {
            expected: model.n_obs,
            got: y.len(),
        });
    }
    pit_values(&model.per_obs_mu, &model.per_obs_nu, y, seed)
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `values` and U(0,1).
pub fn ks_statistic(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let i = i as f64;
            ((i + 1.0) / n - u).max(u - i / n)
        })
        .fold(0.0, f64::max)
}

/// `(uniform quantile, PIT quantile)` at `grid` equispaced probabilities
/// `(k - 0.5) / grid`. Sorted PIT values sit at plotting positions
/// `(i - 0.5) / n` and are linearly interpolated between them.
pub fn pit_quantile_table(
    pit: &PitSample,
    grid: usize,
) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    if grid < 2 {
        return Err(DiagnosticsError::InvalidArgument(
            "grid must be at least 2".into(),
        ));
    }
    if pit.values.is_empty() {
        return Err(DiagnosticsError::InvalidArgument("empty PIT sample".into()));
    }
    let mut sorted = pit.values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok((1..=grid)
        .map(|k| {
            let p = (k as f64 - 0.5) / grid as f64;
            let pos = p * n as f64 - 0.5;
            let q = if pos <= 0.0 {
                sorted[0]
            } else if pos >= (n - 1) as f64 {
                sorted[n - 1]
            } else {
                let lo = pos.floor() as usize;
                let w = pos - lo as f64;
                sorted[lo] * (1.0 - w) + sorted[lo + 1] * w
            };
            (p, q)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Counts in `bins` equal-width bins on [0, 1]; 1 falls in the last bin.
pub fn pit_histogram(pit: &PitSample, bins: usize) -> Result<Vec<HistogramBin>, DiagnosticsError> {
    if bins == 0 {
        return Err(DiagnosticsError::InvalidArgument(
            "bins must be positive".into(),
        ));
    }
    let mut counts = vec![0usize; bins];
    for &u in &pit.values {
        let b = ((u * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}
