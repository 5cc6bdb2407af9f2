use super::{aic, DispersionFit, FitError, FitOptions, FittedModel, Link};
use crate::distribution::{CmpParams, MomentFunctionals, MAX_NU};
use crate::special::{ln_factorial, pairwise_sum};
use nalgebra::DMatrix;

const MIN_NU: f64 = 1e-8;

fn functionals(mu: f64, nu: f64, opts: &FitOptions) -> Result<MomentFunctionals, FitError> {
    Ok(CmpParams::with_settings(mu, nu, &opts.solver)?.moment_functionals())
}

/// MLE for an iid sample. The mean estimate is the sample mean; `nu` solves
/// `mean(log y!) = B(ybar, nu)`, which is monotone decreasing in `nu`.
pub fn fit_iid(y: &[u64], opts: &FitOptions) -> Result<FittedModel, FitError> {
    let n = y.len();
    if n < 2 {
        return Err(FitError::InsufficientData(format!(
            "{n} observations; at least 2 are needed"
        )));
    }
    let ybar = pairwise_sum(&y.iter().map(|&v| v as f64).collect::<Vec<_>>()) / n as f64;
    if y.iter().all(|&v| v == y[0]) {
        return Err(FitError::DegenerateData { mu: ybar });
    }
    let lf: Vec<f64> = y.iter().map(|&v| ln_factorial(v)).collect();
    let target = pairwise_sum(&lf) / n as f64;
    let scale = target.abs().max(1.0);

    let resid = |theta: f64| -> Result<(f64, MomentFunctionals), FitError> {
        let m = functionals(ybar, theta.exp(), opts)?;
        Ok((m.b_val - target, m))
    };

    let mut lo = MIN_NU.ln();
    let mut hi = MAX_NU.ln();
    let (f_lo, _) = resid(lo)?;
    if f_lo < 0.0 {
        return Err(FitError::NoConvergence {
            iterations: 0,
            residual: f_lo,
        });
    }
    let (f_hi, _) = resid(hi)?;
    if f_hi > 0.0 {
        return Err(FitError::DegenerateData { mu: ybar });
    }

    let mut theta = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    while iterations < opts.solver.max_iter {
        iterations += 1;
        let (f, m) = resid(theta)?;
        residual = f;
        if f.abs() <= 1e-13 * scale {
            converged = true;
            break;
        }
        if f > 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo < 1e-14 {
            converged = true;
            break;
        }
        // dB/dnu = -(C - A^2/V)
        let slope = -theta.exp() * m.nu_information();
        let newton = theta - f / slope;
        theta = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    if !converged {
        return Err(FitError::NoConvergence {
            iterations,
            residual,
        });
    }

    let nu = theta.exp();
    let params = CmpParams::with_settings(ybar, nu, &opts.solver)?;
    let m = params.moment_functionals();
    let ll: Vec<f64> = y.iter().map(|&v| params.log_pmf(v)).collect();
    let loglik = pairwise_sum(&ll);
    let score_nu: Vec<f64> = y
        .iter()
        .zip(&lf)
        .map(|(&v, l)| m.a_val * (v as f64 - ybar) / m.variance - (l - m.b_val))
        .collect();
    let nf = n as f64;
    Ok(FittedModel {
        link: Link::Identity,
        coef_names: vec!["mu".to_string()],
        beta: vec![ybar],
        cov_beta: DMatrix::from_element(1, 1, m.variance / nf),
        dispersion: DispersionFit::Constant { nu },
        cov_disp: DMatrix::from_element(1, 1, 1.0 / (nf * m.nu_information())),
        loglik,
        aic: aic(loglik, 2),
        n_obs: n,
        converged: true,
        iterations,
        score_norm: pairwise_sum(&score_nu).abs(),
        per_obs_mu: vec![ybar; n],
        per_obs_nu: vec![nu; n],
    })
}
