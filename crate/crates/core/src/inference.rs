//! Wald and likelihood-ratio tests for fitted models, and AIC comparison.

use crate::fit::{DispersionFit, FittedModel};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};
use thiserror::Error;

/// Log-likelihood slack allowed when a restricted fit beats the full one.
pub const NESTING_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("constraint covariance M V M' is singular")]
    SingularConstraintCov,
    #[error("restricted log-likelihood {restricted} exceeds full log-likelihood {full}")]
    NotNested { full: f64, restricted: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),
}

/// Linear hypothesis `M beta = delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub constraint_matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl Hypothesis {
    pub fn new(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, InferenceError> {
        if m.nrows() != rhs.len() {
            return Err(InferenceError::DimensionMismatch(format!(
                "{} constraints but {} right-hand sides",
                m.nrows(),
                rhs.len()
            )));
        }
        if m.nrows() == 0 || m.nrows() > m.ncols() {
            return Err(InferenceError::InvalidHypothesis(format!(
                "{} constraints on {} coefficients",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.rank(1e-10 * m.amax().max(1.0)) < m.nrows() {
            return Err(InferenceError::InvalidHypothesis(
                "constraint matrix is not of full row rank".into(),
            ));
        }
        Ok(Hypothesis {
            constraint_matrix: m,
            rhs,
        })
    }

    /// `beta_j = 0` for each listed coefficient index.
    pub fn zero_coefficients(q: usize, indices: &[usize]) -> Result<Self, InferenceError> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= q) {
            return Err(InferenceError::DimensionMismatch(format!(
                "coefficient index {bad} out of range for {q} coefficients"
            )));
        }
        let m = DMatrix::from_fn(
            indices.len(),
            q,
            |i, j| if indices[i] == j { 1.0 } else { 0.0 },
        );
        Hypothesis::new(m, DVector::zeros(indices.len()))
    }

    pub fn r(&self) -> usize {
        self.constraint_matrix.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Wald,
    Lrt,
    LrtPoisson,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub df_denominator: Option<usize>,
    pub p_chi2: f64,
    pub p_f: Option<f64>,
    pub method: TestMethod,
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64)
        .expect("df >= 1")
        .sf(x)
        .clamp(0.0, 1.0)
}

/// Upper tail of `F(d1, d2)`.
pub fn f_sf(x: f64, d1: usize, d2: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(d1 as f64, d2 as f64)
        .expect("df >= 1")
        .sf(x)
        .clamp(0.0, 1.0)
}

pub fn wald_test(model: &FittedModel, h: &Hypothesis) -> Result<TestResult, InferenceError> {
    let q = model.n_mean_params();
    if h.constraint_matrix.ncols() != q {
        return Err(InferenceError::DimensionMismatch(format!(
            "hypothesis has {} columns, model has {q} coefficients",
            h.constraint_matrix.ncols()
        )));
    }
    if !model.converged {
        log::warn!("Wald test on a fit that did not converge");
    }
    let m = &h.constraint_matrix;
    let beta = DVector::from_column_slice(&model.beta);
    let diff = m * beta - &h.rhs;
    let cov = m * &model.cov_beta * m.transpose();
    let chol = cov
        .cholesky()
        .ok_or(InferenceError::SingularConstraintCov)?;
    let statistic = diff.dot(&chol.solve(&diff)).max(0.0);
    Ok(TestResult {
        statistic,
        df: h.r(),
        df_denominator: None,
        p_chi2: chi2_sf(statistic, h.r()),
        p_f: None,
        method: TestMethod::Wald,
    })
}

fn lr_statistic(full: &FittedModel, restricted: &FittedModel) -> Result<f64, InferenceError> {
    if full.n_obs != restricted.n_obs {
        return Err(InferenceError::DimensionMismatch(format!(
            "full model has {} observations, restricted has {}",
            full.n_obs, restricted.n_obs
        )));
    }
    if !full.converged || !restricted.converged {
        log::warn!("likelihood-ratio test on a fit that did not converge");
    }
    let gap = full.loglik - restricted.loglik;
    if gap < -NESTING_TOLERANCE {
        return Err(InferenceError::NotNested {
            full: full.loglik,
            restricted: restricted.loglik,
        });
    }
    Ok((2.0 * gap).max(0.0))
}

/// Likelihood-ratio test of `r` linear restrictions. With `f_calibrate`, the
/// statistic divided by `r` is also referred to `F(r, n - q)` where `q` counts
/// the mean coefficients of the full model.
pub fn lrt_composite(
    full: &FittedModel,
    restricted: &FittedModel,
    r: usize,
    f_calibrate: bool,
) -> Result<TestResult, InferenceError> {
    if r == 0 {
        return Err(InferenceError::InvalidHypothesis(
            "r must be positive".into(),
        ));
    }
    let statistic = lr_statistic(full, restricted)?;
    let (df_denominator, p_f) = if f_calibrate {
        let q = full.n_mean_params();
        if full.n_obs <= q {
            return Err(InferenceError::DimensionMismatch(format!(
                "n = {} leaves no denominator degrees of freedom for q = {q}",
                full.n_obs
            )));
        }
        let d2 = full.n_obs - q;
        (Some(d2), Some(f_sf(statistic / r as f64, r, d2)))
    } else {
        (None, None)
    };
    Ok(TestResult {
        statistic,
        df: r,
        df_denominator,
        p_chi2: chi2_sf(statistic, r),
        p_f,
        method: TestMethod::Lrt,
    })
}

/// Tests `nu = 1` against a free constant dispersion with the same mean model.
pub fn lrt_poisson(
    full: &FittedModel,
    poisson_fit: &FittedModel,
) -> Result<TestResult, InferenceError> {
    if poisson_fit.dispersion != (DispersionFit::Fixed { nu: 1.0 }) {
        return Err(InferenceError::InvalidHypothesis(
            "the reference fit must have its dispersion fixed at 1".into(),
        ));
    }
    if full.coef_names != poisson_fit.coef_names {
        return Err(InferenceError::DimensionMismatch(
            "the two fits use different mean models".into(),
        ));
    }
    let statistic = lr_statistic(full, poisson_fit)?;
    Ok(TestResult {
        statistic,
        df: 1,
        df_denominator: None,
        p_chi2: chi2_sf(statistic, 1),
        p_f: None,
        method: TestMethod::LrtPoisson,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    /// Position of the model in the input list.
    pub model: usize,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
}

/// Models sorted by AIC, smallest first.
pub fn compare(models: &[FittedModel]) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = models
        .iter()
        .enumerate()
        .map(|(i, m)| ComparisonRow {
            model: i,
            loglik: m.loglik,
            aic: m.aic,
            n_params: m.n_params(),
        })
        .collect();
    rows.sort_by(|a, b| a.aic.total_cmp(&b.aic).then(a.model.cmp(&b.model)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    /// Two-sided normal p-value.
    pub p: f64,
}

pub fn coefficient_table(model: &FittedModel) -> Vec<CoefficientRow> {
    let normal = Normal::standard();
    model
        .coef_names
        .iter()
        .zip(&model.beta)
        .zip(model.se_beta())
        .map(|((name, &estimate), se)| {
            let t = estimate / se;
            CoefficientRow {
                name: name.clone(),
                estimate,
                se,
                t,
                p: (2.0 * normal.sf(t.abs())).min(1.0),
            }
        })
        .collect()
}
