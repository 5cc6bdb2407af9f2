//! Mean-parametrized Conway-Maxwell-Poisson distribution.
//!
//! The pmf is `lambda^y / (y!)^nu / Z(lambda, nu)` where the rate `lambda` is the
//! unique value making the mean equal to `mu`. All series are summed in log space
//! and truncated once the neglected tail is provably below `tail_tol` times the
//! partial sum.

use crate::special::{ln_factorial, LogSumExp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Dispersion values above this are clamped (Bernoulli regime).
pub const MAX_NU: f64 = 1.0e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "normalizing series diverges (nu = 0 requires lambda < 1, got log lambda = {log_lambda})"
    )]
    DivergentSeries { log_lambda: f64 },
    #[error("series truncation exceeded the hard cap of {cap} terms")]
    TruncationLimit { cap: usize },
    #[error(
        "rate solver did not converge after {iterations} iterations (mean residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Controls series truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSettings {
    pub tail_tol: f64,
    pub max_terms: usize,
}

impl Default for SeriesSettings {
    fn default() -> Self {
        SeriesSettings {
            tail_tol: 1e-12,
            max_terms: 1_000_000,
        }
    }
}

/// Controls the implicit rate solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Mean residual tolerance, scaled by `max(1, mu)`.
    pub tol: f64,
    pub max_iter: usize,
    pub series: SeriesSettings,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-12,
            max_iter: 200,
            series: SeriesSettings::default(),
        }
    }
}

/// The truncated series `y*log(lambda) - nu*log(y!)` for `y = S..=T`, evaluated in
/// rate space. This is the workhorse behind every expectation in the crate.
///
/// `S` is 0 unless the mode is large, in which case the window starts where the
/// neglected lower tail is provably below `tail_tol` times the mode term.
#[derive(Debug, Clone)]
pub struct RateSeries {
    log_lambda: f64,
    nu: f64,
    log_z: f64,
    start: u64,
    /// Log weights relative to the term at `start`.
    log_weights: Vec<f64>,
    /// `log_z` minus the log weight at `start`.
    log_z_rel: f64,
}

/// Modes below this are summed from zero.
const WINDOW_MIN_MODE: f64 = 1.0e4;

/// First `y` of the summation window.
fn window_start(log_lambda: f64, nu: f64, log_tol: f64) -> u64 {
    if nu == 0.0 {
        return 0;
    }
    let mode = (log_lambda / nu).exp().floor();
    if !(mode >= WINDOW_MIN_MODE) {
        return 0;
    }
    let mode = mode as u64;
    let w_mode = mode as f64 * log_lambda - nu * ln_factorial(mode);
    let mut y = mode;
    while y > 0 {
        // below y, successive term ratios are at most r = y^nu / lambda < 1
        let log_r = nu * (y as f64).ln() - log_lambda;
        if log_r < 0.0 {
            let w = y as f64 * log_lambda - nu * ln_factorial(y);
            let log_tail = w + log_r - (-log_r.exp()).ln_1p();
            if log_tail < log_tol + w_mode {
                return y;
            }
        }
        y -= 1;
    }
    0
}

impl RateSeries {
    pub fn new(log_lambda: f64, nu: f64, settings: &SeriesSettings) -> Result<Self, DistError> {
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(DistError::InvalidParameter(format!(
                "dispersion must be finite and nonnegative, got {nu}"
            )));
        }
        if log_lambda.is_nan() || log_lambda == f64::INFINITY {
            return Err(DistError::InvalidParameter(format!(
                "log rate must be finite, got {log_lambda}"
            )));
        }
        if log_lambda == f64::NEG_INFINITY {
            return Ok(RateSeries {
                log_lambda,
                nu,
                log_z: 0.0,
                start: 0,
                log_weights: vec![0.0],
                log_z_rel: 0.0,
            });
        }
        if nu == 0.0 && log_lambda >= 0.0 {
            return Err(DistError::DivergentSeries { log_lambda });
        }

        let log_tol = settings.tail_tol.ln();
        let mut acc = LogSumExp::new();
        let mut log_weights = Vec::new();
        let start = window_start(log_lambda, nu, log_tol);
        let mut y = start;
        // Far from zero the absolute weights are large; accumulating the
        // relative ones keeps neighbouring terms accurate to each other.
        let mut w = 0.0;
        loop {
            if start == 0 {
                w = y as f64 * log_lambda - nu * ln_factorial(y);
            } else if y > start {
                w += log_lambda - nu * (y as f64).ln();
            }
            log_weights.push(w);
            acc.push(w);

            // Bound the tail of k^2 * t_k beyond y, which dominates both the
            // neglected mass and the neglected first two moments. The ratio of
            // successive k^2 * t_k terms is decreasing once past the mode.
            let k = (y + 1) as f64;
            let log_ratio = log_lambda - nu * k.ln();
            let log_moment_ratio = log_ratio + 2.0 * ((k + 1.0) / k).ln();
            if log_ratio < 0.0 && log_moment_ratio < 0.0 {
                let log_next = w + log_ratio + 2.0 * k.ln();
                let log_tail = log_next - (-log_moment_ratio.exp()).ln_1p();
                if log_tail < log_tol + acc.value() {
                    break;
                }
            }
            y += 1;
            if log_weights.len() >= settings.max_terms {
                return Err(DistError::TruncationLimit {
                    cap: settings.max_terms,
                });
            }
        }
        let log_z_rel = crate::special::log_sum_exp(&log_weights);
        let base = start as f64 * log_lambda - nu * ln_factorial(start);
        Ok(RateSeries {
            log_lambda,
            nu,
            log_z: base + log_z_rel,
            start,
            log_weights,
            log_z_rel,
        })
    }

    pub fn log_lambda(&self) -> f64 {
        self.log_lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// Smallest `y` kept in the window.
    pub fn start(&self) -> u64 {
        self.start
    }

    /// Largest `y` kept in the window.
    pub fn truncation(&self) -> u64 {
        self.start + (self.log_weights.len() - 1) as u64
    }

    /// `(y, P(Y = y))` over the window.
    pub fn probabilities(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.log_weights
            .iter()
            .enumerate()
            .map(move |(i, w)| (self.start + i as u64, (w - self.log_z_rel).exp()))
    }

    pub fn mean(&self) -> f64 {
        self.probabilities().map(|(y, p)| y as f64 * p).sum()
    }

    fn mean_variance(&self) -> (f64, f64) {
        let mean = self.mean();
        let var = self
            .probabilities()
            .map(|(y, p)| (y as f64 - mean).powi(2) * p)
            .sum();
        (mean, var)
    }

    /// `E[Y^r]` over the window.
    pub fn raw_moment(&self, r: u32) -> f64 {
        self.probabilities()
            .map(|(y, p)| (y as f64).powi(r as i32) * p)
            .sum()
    }

    /// Expectations are taken around `mu` (the nominal mean) rather than the
    /// window mean so they match the scores exactly.
    fn functionals(&self, mu: f64) -> MomentFunctionals {
        let mut variance = 0.0;
        let mut a_val = 0.0;
        let mut b_val = 0.0;
        for (y, p) in self.probabilities() {
            let dy = y as f64 - mu;
            let lf = ln_factorial(y);
            variance += dy * dy * p;
            a_val += lf * dy * p;
            b_val += lf * p;
        }
        let c_val = self
            .probabilities()
            .map(|(y, p)| (ln_factorial(y) - b_val).powi(2) * p)
            .sum();
        MomentFunctionals {
            variance,
            a_val,
            b_val,
            c_val,
        }
    }
}

/// `(log Z, T)` for the CMP series at rate `exp(log_lambda)` and dispersion `nu`.
pub fn log_normalizer(
    log_lambda: f64,
    nu: f64,
    settings: &SeriesSettings,
) -> Result<(f64, u64), DistError> {
    let series = RateSeries::new(log_lambda, nu, settings)?;
    Ok((series.log_z, series.truncation()))
}

/// Mean of the rate-parametrized CMP distribution.
pub fn mean_from_rate(
    log_lambda: f64,
    nu: f64,
    settings: &SeriesSettings,
) -> Result<f64, DistError> {
    Ok(RateSeries::new(log_lambda, nu, settings)?.mean())
}

/// Asymptotic mean approximation `lambda^(1/nu) - (nu-1)/(2 nu)`.
pub fn approx_mean(log_lambda: f64, nu: f64) -> f64 {
    (log_lambda / nu).exp() - (nu - 1.0) / (2.0 * nu)
}

fn clamp_nu(nu: f64) -> f64 {
    if nu > MAX_NU {
        log::warn!("dispersion {nu} clamped to {MAX_NU}");
        MAX_NU
    } else {
        nu
    }
}

fn check_mean_dispersion(mu: f64, nu: f64) -> Result<(), DistError> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(DistError::InvalidParameter(format!(
            "mean must be finite and nonnegative, got {mu}"
        )));
    }
    if !(nu >= 0.0) || nu.is_nan() {
        return Err(DistError::InvalidParameter(format!(
            "dispersion must be nonnegative, got {nu}"
        )));
    }
    Ok(())
}

/// Starting point for the rate solve.
pub fn rate_seed(mu: f64, nu: f64) -> f64 {
    let shift = ((nu - 1.0) / (2.0 * nu)).max(0.0);
    nu * (mu + shift).max(1e-4).ln()
}

/// Solves for `log lambda` such that the CMP mean equals `mu`.
pub fn solve_rate(mu: f64, nu: f64, settings: &SolverSettings) -> Result<f64, DistError> {
    Ok(solve_series(mu, nu, None, settings)?.log_lambda)
}

/// Same as [`solve_rate`], started from a caller-provided guess.
pub fn solve_rate_from(
    mu: f64,
    nu: f64,
    start: f64,
    settings: &SolverSettings,
) -> Result<f64, DistError> {
    Ok(solve_series(mu, nu, Some(start), settings)?.log_lambda)
}

fn solve_series(
    mu: f64,
    nu: f64,
    start: Option<f64>,
    settings: &SolverSettings,
) -> Result<RateSeries, DistError> {
    check_mean_dispersion(mu, nu)?;
    let nu = clamp_nu(nu);
    if mu == 0.0 {
        return RateSeries::new(f64::NEG_INFINITY, nu, &settings.series);
    }
    if nu == 0.0 {
        // mean of the geometric series is lambda / (1 - lambda)
        return RateSeries::new((mu / (mu + 1.0)).ln(), nu, &settings.series);
    }
    if nu == 1.0 {
        return RateSeries::new(mu.ln(), nu, &settings.series);
    }

    let tol = settings.tol * mu.max(1.0);
    let max_step = 2.0 * nu.max(1.0);
    let mut x = start
        .filter(|s| s.is_finite())
        .unwrap_or_else(|| rate_seed(mu, nu));
    // lo: mean below target, hi: mean above target
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut grow = 1.0;
    let mut residual = f64::NAN;

    for _ in 0..settings.max_iter {
        let series = match RateSeries::new(x, nu, &settings.series) {
            Ok(s) => s,
            Err(DistError::TruncationLimit { .. }) => {
                hi = x;
                x = if lo.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    grow *= 2.0;
                    hi - grow
                };
                continue;
            }
            Err(e) => return Err(e),
        };
        let (mean, var) = series.mean_variance();
        residual = mean - mu;
        // the second test accepts a residual that is only summation noise:
        // the Newton correction is already at the resolution of log lambda
        if residual.abs() <= tol || (residual / var).abs() <= 8.0 * f64::EPSILON * x.abs().max(1.0)
        {
            return Ok(series);
        }
        if residual < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            break;
        }

        let newton = x - residual / var;
        let step_ok = newton.is_finite() && (newton - x).abs() <= max_step;
        x = if step_ok && newton > lo && newton < hi {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            grow *= 2.0;
            lo + grow
        } else {
            grow *= 2.0;
            hi - grow
        };
    }
    Err(DistError::NoConvergence {
        iterations: settings.max_iter,
        residual,
    })
}

/// `V`, `A`, `B` and `C` at a given `(mu, nu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentFunctionals {
    /// `Var(Y)`
    pub variance: f64,
    /// `E[log(Y!) (Y - mu)]`
    pub a_val: f64,
    /// `E[log(Y!)]`
    pub b_val: f64,
    /// `Var(log(Y!))`
    pub c_val: f64,
}

impl MomentFunctionals {
    /// Fisher information for `nu` carried by one observation: `C - A^2/V`.
    pub fn nu_information(&self) -> f64 {
        if self.variance > 0.0 {
            self.c_val - self.a_val * self.a_val / self.variance
        } else {
            0.0
        }
    }
}

/// A solved `CMP_mu(mu, nu)` distribution.
#[derive(Debug, Clone)]
pub struct CmpParams {
    mu: f64,
    nu: f64,
    series: RateSeries,
}

impl CmpParams {
    pub fn new(mu: f64, nu: f64) -> Result<Self, DistError> {
        Self::with_settings(mu, nu, &SolverSettings::default())
    }

    pub fn with_settings(mu: f64, nu: f64, settings: &SolverSettings) -> Result<Self, DistError> {
        Self::solve(mu, nu, None, settings)
    }

    /// Solves the rate starting from `start` (typically the previous iterate's log rate).
    pub fn warm(
        mu: f64,
        nu: f64,
        start: f64,
        settings: &SolverSettings,
    ) -> Result<Self, DistError> {
        Self::solve(mu, nu, Some(start), settings)
    }

    fn solve(
        mu: f64,
        nu: f64,
        start: Option<f64>,
        settings: &SolverSettings,
    ) -> Result<Self, DistError> {
        let series = solve_series(mu, nu, start, settings)?;
        Ok(CmpParams {
            mu,
            nu: series.nu,
            series,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn log_lambda(&self) -> f64 {
        self.series.log_lambda
    }

    pub fn log_z(&self) -> f64 {
        self.series.log_z
    }

    pub fn truncation(&self) -> u64 {
        self.series.truncation()
    }

    pub fn series(&self) -> &RateSeries {
        &self.series
    }

    pub fn log_pmf(&self, y: u64) -> f64 {
        if self.series.log_lambda == f64::NEG_INFINITY {
            return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let s = &self.series;
        if s.start > 0 && y >= s.start && y <= self.truncation() {
            return s.log_weights[(y - s.start) as usize] - s.log_z_rel;
        }
        y as f64 * s.log_lambda - self.nu * ln_factorial(y) - s.log_z
    }

    pub fn pmf(&self, y: u64) -> f64 {
        self.log_pmf(y).exp()
    }

    pub fn cdf(&self, y: u64) -> f64 {
        let total: f64 = self
            .series
            .probabilities()
            .take_while(|&(k, _)| k <= y)
            .map(|(_, p)| p)
            .sum();
        total.min(1.0)
    }

    /// Smallest `y` with `cdf(y) >= p`, capped at the truncation point.
    pub fn quantile(&self, p: f64) -> u64 {
        let mut acc = 0.0;
        if p <= 0.0 {
            return 0;
        }
        for (y, prob) in self.series.probabilities() {
            acc += prob;
            if acc >= p {
                return y;
            }
        }
        self.truncation()
    }

    pub fn moment_functionals(&self) -> MomentFunctionals {
        self.series.functionals(self.mu)
    }

    pub fn raw_moment(&self, r: u32) -> f64 {
        self.series.raw_moment(r)
    }

    /// Cumulative probabilities over the window, starting at `series().start()`.
    pub fn cdf_table(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.series
            .probabilities()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect()
    }

    /// One inversion draw from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    /// `n` iid draws by inversion, reproducible from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = self.cdf_table();
        let start = self.series.start();
        let last = self.truncation();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                (start + table.partition_point(|&c| c < u) as u64).min(last)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series() -> SeriesSettings {
        SeriesSettings::default()
    }

    fn brute_log_z(log_lambda: f64, nu: f64, upto: u64) -> f64 {
        let w: Vec<f64> = (0..=upto)
            .map(|y| y as f64 * log_lambda - nu * statrs::function::gamma::ln_gamma(y as f64 + 1.0))
            .collect();
        crate::special::log_sum_exp(&w)
    }

    #[test]
    fn normalizer_special_cases() {
        let (lz, _) = log_normalizer(3f64.ln(), 1.0, &series()).unwrap();
        assert_abs_diff_eq!(lz, 3.0, epsilon = 1e-12);
        let (lz, _) = log_normalizer(0.5f64.ln(), 0.0, &series()).unwrap();
        assert_abs_diff_eq!(lz, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normalizer_matches_long_sum() {
        let (lz, t) = log_normalizer(2f64.ln(), 2.1, &series()).unwrap();
        assert!(t < 100);
        assert_abs_diff_eq!(lz, brute_log_z(2f64.ln(), 2.1, 10_000), epsilon = 1e-12);
    }

    #[test]
    fn windowed_series_far_from_zero() {
        let ll = 20f64.ln();
        let series = RateSeries::new(ll, 0.2, &series()).unwrap();
        assert!(series.start() > 0);
        let total: f64 = series.probabilities().map(|(_, p)| p).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // the asymptotic mean is essentially exact this deep in its regime
        let rel = (series.mean() - approx_mean(ll, 0.2)).abs() / series.mean();
        assert!(rel < 1e-10, "{rel}");
        let p = CmpParams::with_settings(series.mean(), 0.2, &SolverSettings::default()).unwrap();
        assert!((p.log_lambda() - ll).abs() < 1e-12);
        let y = p.series().start() + 5000;
        let direct = y as f64 * p.log_lambda() - 0.2 * ln_factorial(y) - p.log_z();
        assert!((p.log_pmf(y) - direct).abs() < 1e-6);
        assert_eq!(p.quantile(0.0), 0);
        let draws = p.sample(2000, 1);
        let m = draws.iter().sum::<u64>() as f64 / 2000.0;
        assert!((m - series.mean()).abs() < 4.0 * (series.mean() / 0.2 / 2000.0).sqrt());
    }

    #[test]
    fn divergent_geometric_series() {
        assert!(matches!(
            log_normalizer(0.0, 0.0, &series()),
            Err(DistError::DivergentSeries { .. })
        ));
        assert!(matches!(
            mean_from_rate(0.1, 0.0, &series()),
            Err(DistError::DivergentSeries { .. })
        ));
    }

    #[test]
    fn truncation_cap_is_enforced() {
        let tight = SeriesSettings {
            tail_tol: 1e-12,
            max_terms: 50,
        };
        assert_eq!(
            log_normalizer(100f64.ln(), 1.0, &tight),
            Err(DistError::TruncationLimit { cap: 50 })
        );
    }

    #[test]
    fn mean_from_rate_cases() {
        assert_abs_diff_eq!(
            mean_from_rate(3f64.ln(), 1.0, &series()).unwrap(),
            3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            mean_from_rate(0.5f64.ln(), 0.0, &series()).unwrap(),
            1.0,
            epsilon = 1e-11
        );
        let ll = 2f64.ln();
        let w: Vec<f64> = (0..=100_000u64)
            .map(|y| y as f64 * ll - 0.4 * statrs::function::gamma::ln_gamma(y as f64 + 1.0))
            .collect();
        let lz = crate::special::log_sum_exp(&w);
        let oracle: f64 = w
            .iter()
            .enumerate()
            .map(|(y, w)| y as f64 * (w - lz).exp())
            .sum();
        assert_abs_diff_eq!(
            mean_from_rate(ll, 0.4, &series()).unwrap(),
            oracle,
            epsilon = 1e-10
        );
    }

    #[test]
    fn solve_rate_cases() {
        let s = SolverSettings::default();
        assert_abs_diff_eq!(
            solve_rate(3.0, 1.0, &s).unwrap(),
            3f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            solve_rate(2.0, 0.0, &s).unwrap(),
            (2.0f64 / 3.0).ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            mean_from_rate((2.0f64 / 3.0).ln(), 0.0, &s.series).unwrap(),
            2.0,
            epsilon = 1e-11
        );
        let ll = solve_rate(6.0, 2.1, &s).unwrap();
        let w: Vec<f64> = (0..=10_000u64)
            .map(|y| y as f64 * ll - 2.1 * statrs::function::gamma::ln_gamma(y as f64 + 1.0))
            .collect();
        let lz = crate::special::log_sum_exp(&w);
        let mean: f64 = w
            .iter()
            .enumerate()
            .map(|(y, w)| y as f64 * (w - lz).exp())
            .sum();
        assert_abs_diff_eq!(mean, 6.0, epsilon = 1e-9);
        assert_eq!(solve_rate(0.0, 1.5, &s).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn solve_rate_hard_regimes() {
        let s = SolverSettings::default();
        for (mu, nu) in [
            (0.001, 4.0),
            (50.0, 0.05),
            (5.0, 1000.0),
            (0.6, 50.0),
            (1e4, 0.7),
            (250.0, 3.0),
        ] {
            let ll = solve_rate(mu, nu, &s).unwrap();
            let m = mean_from_rate(ll, nu, &s.series).unwrap();
            assert!(
                (m - mu).abs() <= 1e-10 * mu.max(1.0),
                "mu={mu} nu={nu} m={m}"
            );
        }
    }

    #[test]
    fn warm_start_from_far_away() {
        let s = SolverSettings::default();
        let cold = solve_rate(7.5, 1.8, &s).unwrap();
        for start in [-30.0, 0.0, 40.0] {
            let warm = solve_rate_from(7.5, 1.8, start, &s).unwrap();
            assert_abs_diff_eq!(warm, cold, epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_dispersion_is_clamped() {
        let p = CmpParams::new(0.5, 5e3).unwrap();
        assert_eq!(p.nu(), MAX_NU);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            CmpParams::new(-1.0, 1.0),
            Err(DistError::InvalidParameter(_))
        ));
        assert!(matches!(
            CmpParams::new(1.0, -0.5),
            Err(DistError::InvalidParameter(_))
        ));
        assert!(matches!(
            CmpParams::new(f64::NAN, 1.0),
            Err(DistError::InvalidParameter(_))
        ));
    }

    #[test]
    fn point_mass_at_zero_mean() {
        let p = CmpParams::new(0.0, 2.0).unwrap();
        assert_eq!(p.pmf(0), 1.0);
        assert_eq!(p.pmf(3), 0.0);
        assert_eq!(p.cdf(0), 1.0);
        assert_eq!(p.quantile(0.999), 0);
        assert_eq!(p.moment_functionals().variance, 0.0);
        assert!(p.sample(10, 1).iter().all(|&y| y == 0));
    }

    #[test]
    fn pmf_examples() {
        let p = CmpParams::new(3.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.pmf(2), (-3f64).exp() * 4.5, epsilon = 1e-14);
        let g = CmpParams::new(2.0, 0.0).unwrap();
        assert_abs_diff_eq!(g.pmf(0), 1.0 / 3.0, epsilon = 1e-14);

        let u = CmpParams::new(6.0, 2.1).unwrap();
        let ll = u.log_lambda();
        let w: Vec<f64> = (0..=10_000u64)
            .map(|y| y as f64 * ll - 2.1 * statrs::function::gamma::ln_gamma(y as f64 + 1.0))
            .collect();
        let lz = crate::special::log_sum_exp(&w);
        for y in 0..=20u64 {
            assert_abs_diff_eq!(u.pmf(y), (w[y as usize] - lz).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn cdf_and_quantile() {
        let g = CmpParams::new(2.0, 0.0).unwrap();
        assert_abs_diff_eq!(g.cdf(0), 1.0 / 3.0, epsilon = 1e-14);
        assert!((g.cdf(g.truncation()) - 1.0).abs() <= 1e-12);

        let p = CmpParams::new(3.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.cdf(3), (-3f64).exp() * 13.0, epsilon = 1e-14);
        assert_eq!(p.quantile(0.0), 0);
        assert_eq!(p.quantile(0.5), 3);
        // Poisson(3) cdf: 0.0498, 0.1991, 0.4232, 0.6472
        assert_eq!(p.quantile(0.42), 2);
        assert_eq!(p.quantile(0.43), 3);
        for y in 0..12 {
            assert_eq!(p.quantile(p.cdf(y)), y);
        }
    }

    #[test]
    fn moment_functional_examples() {
        let p = CmpParams::new(4.2, 1.0).unwrap();
        let m = p.moment_functionals();
        assert_abs_diff_eq!(m.variance, 4.2, epsilon = 1e-11);
        let poisson_b: f64 = (0..200u64)
            .map(|y| {
                let lp = y as f64 * 4.2f64.ln()
                    - 4.2
                    - statrs::function::gamma::ln_gamma(y as f64 + 1.0);
                lp.exp() * statrs::function::gamma::ln_gamma(y as f64 + 1.0)
            })
            .sum();
        assert_abs_diff_eq!(m.b_val, poisson_b, epsilon = 1e-11);

        let g = CmpParams::new(2.0, 0.0).unwrap().moment_functionals();
        assert_abs_diff_eq!(g.variance, 6.0, epsilon = 1e-10);

        let u = CmpParams::new(3.0, 2.1).unwrap();
        let m = u.moment_functionals();
        assert!(m.variance < 3.0);
        let ll = u.log_lambda();
        let w: Vec<f64> = (0..=10_000u64)
            .map(|y| y as f64 * ll - 2.1 * statrs::function::gamma::ln_gamma(y as f64 + 1.0))
            .collect();
        let lz = crate::special::log_sum_exp(&w);
        let var: f64 = w
            .iter()
            .enumerate()
            .map(|(y, w)| (y as f64 - 3.0).powi(2) * (w - lz).exp())
            .sum();
        assert_abs_diff_eq!(m.variance, var, epsilon = 1e-10);
        assert!(m.c_val >= 0.0);
        assert!(m.nu_information() > 0.0);
    }

    #[test]
    fn raw_moment_examples() {
        let p = CmpParams::new(3.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.raw_moment(1), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.raw_moment(2), 12.0, epsilon = 1e-11);
        let u = CmpParams::new(6.0, 2.1).unwrap();
        let v = u.moment_functionals().variance;
        assert_abs_diff_eq!(u.raw_moment(2), v + 36.0, epsilon = 1e-10);
    }

    #[test]
    fn approx_mean_examples() {
        assert_abs_diff_eq!(approx_mean(3f64.ln(), 1.0), 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(approx_mean(4f64.ln(), 0.5), 16.5, epsilon = 1e-12);
        let exact = mean_from_rate(2f64.ln(), 0.8, &series()).unwrap();
        assert!((approx_mean(2f64.ln(), 0.8) - exact).abs() / exact < 0.02);
    }

    #[test]
    fn sampling_is_reproducible_and_centred() {
        let p = CmpParams::new(3.0, 1.0).unwrap();
        let a = p.sample(100_000, 7);
        assert_eq!(a, p.sample(100_000, 7));
        assert_ne!(a, p.sample(100_000, 8));
        let mean = a.iter().sum::<u64>() as f64 / a.len() as f64;
        assert!((mean - 3.0).abs() < 4.0 * (3.0f64 / 1e5).sqrt());

        let o = CmpParams::new(6.0, 0.4).unwrap();
        let v = o.moment_functionals().variance;
        let s = o.sample(100_000, 11);
        let m = s.iter().sum::<u64>() as f64 / s.len() as f64;
        let var = s.iter().map(|&y| (y as f64 - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
        assert!((var - v).abs() / v < 0.05, "var {var} vs {v}");
    }

    #[test]
    fn draw_agrees_with_sample_inversion() {
        let p = CmpParams::new(2.5, 1.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let drawn: Vec<u64> = (0..500).map(|_| p.draw(&mut rng)).collect();
        assert_eq!(drawn, p.sample(500, 3));
    }
}
