//! Small numerical helpers shared by the distribution and fitting code.

use statrs::function::gamma::ln_gamma;
use std::sync::OnceLock;

const LN_FACTORIAL_TABLE: usize = 4096;

/// `log(y!)`, via log-gamma. Values below 4096 come from a lazily built table.
pub fn ln_factorial(y: u64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..LN_FACTORIAL_TABLE)
            .map(|k| if k < 2 { 0.0 } else { ln_gamma(k as f64 + 1.0) })
            .collect()
    });
    match table.get(y as usize) {
        Some(v) => *v,
        None => ln_gamma(y as f64 + 1.0),
    }
}

/// Streaming log-sum-exp. Keeps a running maximum so no term ever overflows.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    pub fn push(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY {
            return;
        }
        if log_term > self.max {
            self.scaled = self.scaled * (self.max - log_term).exp() + 1.0;
            self.max = log_term;
        } else {
            self.scaled += (log_term - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Two-pass log-sum-exp over a slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Fixed-order pairwise summation. The result does not depend on thread scheduling.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_factorial_small_values() {
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-13);
        let direct: f64 = (1..=200u64).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(200) - direct).abs() < 1e-10);
        let beyond = ln_factorial(5000);
        assert!((beyond - ln_gamma(5001.0)).abs() < 1e-9);
    }

    #[test]
    fn streaming_matches_two_pass() {
        let v = [-1000.0, -3.0, 2.5, 700.0, 699.0, f64::NEG_INFINITY];
        let mut acc = LogSumExp::new();
        for x in v {
            acc.push(x);
        }
        assert!((acc.value() - log_sum_exp(&v)).abs() < 1e-12);
        assert_eq!(LogSumExp::new().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), 249750.0);
    }
}
