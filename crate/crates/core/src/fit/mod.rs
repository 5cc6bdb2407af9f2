//! Maximum-likelihood fitting for iid samples and CMP_mu regression models.

mod glm;
mod iid;

pub use glm::{fisher_blocks, fit_glm, log_likelihood, observation_scores, score_vector};
pub use iid::fit_iid;

use crate::distribution::{DistError, SolverSettings};
use crate::io::{build_design, DataError, Dataset, DesignMatrix, Formula};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("all counts equal {mu}; the dispersion estimate diverges")]
    DegenerateData { mu: f64 },
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficientDesign { rank: usize, cols: usize },
    #[error("optimizer did not converge after {iterations} iterations (score norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("fitted mean {mu:e} at observation {index} exceeds the cap")]
    MeanOverflow { index: usize, mu: f64 },
    #[error("identity link produced a non-positive mean at observation {index}")]
    NonPositiveMean { index: usize },
    #[error("information matrix is numerically singular (condition number {condition:e})")]
    SingularInformation { condition: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Log,
    Identity,
}

impl Link {
    /// Mean given the linear predictor and the exposure multiplier.
    pub fn mean(self, eta: f64, exposure: f64) -> f64 {
        match self {
            Link::Log => exposure * eta.exp(),
            Link::Identity => exposure * eta,
        }
    }

    /// `d mu / d eta`
    pub fn derivative(self, eta: f64, exposure: f64) -> f64 {
        match self {
            Link::Log => exposure * eta.exp(),
            Link::Identity => exposure,
        }
    }

    pub fn predictor(self, mu: f64, exposure: f64) -> f64 {
        match self {
            Link::Log => (mu / exposure).ln(),
            Link::Identity => mu / exposure,
        }
    }
}

impl std::str::FromStr for Link {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(Link::Log),
            "identity" => Ok(Link::Identity),
            other => Err(format!("unknown link {other:?} (expected log or identity)")),
        }
    }
}

/// What a regression fit is asked to estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub response: String,
    pub mean_terms: Formula,
    pub link: Link,
    /// `None` means a constant dispersion.
    pub dispersion_terms: Option<Formula>,
    /// Exposure column; the mean is multiplied by it.
    pub offset: Option<String>,
    /// Skips dispersion estimation.
    pub fixed_nu: Option<f64>,
}

impl ModelSpec {
    pub fn new(response: &str, mean_terms: Formula) -> Self {
        ModelSpec {
            response: response.to_string(),
            mean_terms,
            link: Link::Log,
            dispersion_terms: None,
            offset: None,
            fixed_nu: None,
        }
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_fixed_nu(mut self, nu: f64) -> Self {
        self.fixed_nu = Some(nu);
        self
    }

    pub fn with_dispersion_terms(mut self, terms: Formula) -> Self {
        self.dispersion_terms = Some(terms);
        self
    }

    pub fn with_offset(mut self, column: &str) -> Self {
        self.offset = Some(column.to_string());
        self
    }

    /// Builds the numeric inputs for [`fit_glm`] from a dataset, dropping rows
    /// with missing values in any used column.
    pub fn prepare(&self, data: &Dataset) -> Result<GlmData, DataError> {
        let mut used: Vec<&str> = vec![self.response.as_str()];
        used.extend(self.mean_terms.variables());
        if let Some(d) = &self.dispersion_terms {
            used.extend(d.variables());
        }
        if let Some(o) = &self.offset {
            used.push(o.as_str());
        }
        used.dedup();
        let (data, _) = data.complete_cases(&used)?;

        let y = data
            .numeric(&self.response)?
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as u64)
                } else {
                    Err(DataError::Parse {
                        row: i + 2,
                        column: self.response.clone(),
                        message: format!("response must be a nonnegative integer, got {v}"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let exposure = match &self.offset {
            Some(name) => {
                let e = data.numeric(name)?.to_vec();
                if let Some(bad) = e.iter().find(|&&v| !(v > 0.0)) {
                    return Err(DataError::Invalid(format!(
                        "exposure column {name} must be strictly positive, found {bad}"
                    )));
                }
                Some(e)
            }
            None => None,
        };
        let x = build_design(&data, &self.mean_terms)?;
        let dispersion_x = self
            .dispersion_terms
            .as_ref()
            .map(|f| build_design(&data, f))
            .transpose()?;
        Ok(GlmData {
            x,
            dispersion_x,
            exposure,
            y,
        })
    }
}

/// Numeric inputs of a regression fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmData {
    pub x: DesignMatrix,
    pub dispersion_x: Option<DesignMatrix>,
    pub exposure: Option<Vec<f64>>,
    pub y: Vec<u64>,
}

impl GlmData {
    pub fn new(x: DesignMatrix, y: Vec<u64>) -> Self {
        GlmData {
            x,
            dispersion_x: None,
            exposure: None,
            y,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn exposure(&self, i: usize) -> f64 {
        self.exposure.as_ref().map_or(1.0, |e| e[i])
    }
}

/// Dispersion side of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Dispersion {
    /// Common `nu` for every observation.
    Constant(f64),
    /// `nu_i = exp(x_i' gamma)`
    Regression(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub beta: DVector<f64>,
    pub dispersion: Dispersion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Joint score infinity-norm threshold.
    pub grad_tol: f64,
    /// Relative log-likelihood change threshold.
    pub loglik_tol: f64,
    pub max_iter: usize,
    pub mean_cap: f64,
    pub solver: SolverSettings,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grad_tol: 1e-8,
            loglik_tol: 1e-10,
            max_iter: 100,
            mean_cap: 1e6,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DispersionFit {
    Fixed { nu: f64 },
    Constant { nu: f64 },
    Regression { names: Vec<String>, gamma: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub link: Link,
    pub coef_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Plug-in covariance of the mean coefficients (inverse expected information).
    pub cov_beta: DMatrix<f64>,
    pub dispersion: DispersionFit,
    /// Covariance of `nu` (constant) or `gamma` (regression); empty when fixed.
    pub cov_disp: DMatrix<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the joint score at the returned estimate.
    pub score_norm: f64,
    pub per_obs_mu: Vec<f64>,
    pub per_obs_nu: Vec<f64>,
}

impl FittedModel {
    pub fn n_mean_params(&self) -> usize {
        self.beta.len()
    }

    pub fn n_params(&self) -> usize {
        self.beta.len()
            + match &self.dispersion {
                DispersionFit::Fixed { .. } => 0,
                DispersionFit::Constant { .. } => 1,
                DispersionFit::Regression { gamma, .. } => gamma.len(),
            }
    }

    pub fn se_beta(&self) -> Vec<f64> {
        self.cov_beta.diagonal().iter().map(|v| v.sqrt()).collect()
    }

    pub fn se_dispersion(&self) -> Vec<f64> {
        self.cov_disp.diagonal().iter().map(|v| v.sqrt()).collect()
    }

    /// Estimated common dispersion, if the model has one.
    pub fn nu(&self) -> Option<f64> {
        match &self.dispersion {
            DispersionFit::Fixed { nu } | DispersionFit::Constant { nu } => Some(*nu),
            DispersionFit::Regression { .. } => None,
        }
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coef_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.beta[i])
    }

    pub fn state(&self) -> ParamState {
        ParamState {
            beta: DVector::from_vec(self.beta.clone()),
            dispersion: match &self.dispersion {
                DispersionFit::Fixed { nu } | DispersionFit::Constant { nu } => {
                    Dispersion::Constant(*nu)
                }
                DispersionFit::Regression { gamma, .. } => {
                    Dispersion::Regression(DVector::from_vec(gamma.clone()))
                }
            },
        }
    }
}

pub(crate) fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}
