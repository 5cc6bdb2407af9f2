use super::{
    aic, Dispersion, DispersionFit, FitError, FitOptions, FittedModel, GlmData, Link, ModelSpec,
    ParamState,
};
use crate::distribution::{CmpParams, MomentFunctionals};
use crate::special::{ln_factorial, pairwise_sum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

const MAX_HALVINGS: usize = 30;
const MAX_CONDITION: f64 = 1e12;

/// Everything the optimizer needs from one observation at the current parameters.
#[derive(Debug, Clone, Copy)]
struct ObsEval {
    mu: f64,
    dmu: f64,
    nu: f64,
    log_lambda: f64,
    mom: MomentFunctionals,
    loglik: f64,
}

impl ObsEval {
    /// `(y - mu) / V`
    fn score_mu(&self, y: u64) -> f64 {
        if self.mom.variance > 0.0 {
            (y as f64 - self.mu) / self.mom.variance
        } else {
            0.0
        }
    }

    /// `A (y - mu) / V - (log y! - B)`
    fn score_nu(&self, y: u64) -> f64 {
        self.mom.a_val * self.score_mu(y) - (ln_factorial(y) - self.mom.b_val)
    }
}

fn dispersion_values(data: &GlmData, dispersion: &Dispersion) -> Result<Vec<f64>, FitError> {
    match dispersion {
        Dispersion::Constant(nu) => Ok(vec![*nu; data.n()]),
        Dispersion::Regression(gamma) => {
            let dx = data.dispersion_x.as_ref().ok_or_else(|| {
                FitError::Invalid("dispersion regression without a dispersion design".into())
            })?;
            if dx.n_cols() != gamma.len() {
                return Err(FitError::Invalid(
                    "dispersion coefficient length mismatch".into(),
                ));
            }
            Ok((&dx.matrix * gamma).iter().map(|e| e.exp()).collect())
        }
    }
}

fn evaluate(
    data: &GlmData,
    link: Link,
    state: &ParamState,
    warm: Option<&[ObsEval]>,
    opts: &FitOptions,
) -> Result<Vec<ObsEval>, FitError> {
    if data.x.n_cols() != state.beta.len() {
        return Err(FitError::Invalid("coefficient length mismatch".into()));
    }
    let eta = &data.x.matrix * &state.beta;
    let nus = dispersion_values(data, &state.dispersion)?;
    (0..data.n())
        .into_par_iter()
        .map(|i| {
            let e = data.exposure(i);
            let mu = link.mean(eta[i], e);
            if !mu.is_finite() || mu > opts.mean_cap {
                return Err(FitError::MeanOverflow { index: i, mu });
            }
            if mu <= 0.0 && link == Link::Identity {
                return Err(FitError::NonPositiveMean { index: i });
            }
            let nu = nus[i];
            let params = match warm.map(|w| w[i]) {
                Some(prev) if prev.log_lambda.is_finite() && prev.nu > 0.0 && prev.mu > 0.0 => {
                    // log lambda scales roughly like nu * log(mu)
                    let start = nu * (prev.log_lambda / prev.nu + (mu / prev.mu).ln());
                    CmpParams::warm(mu, nu, start, &opts.solver)?
                }
                _ => CmpParams::with_settings(mu, nu, &opts.solver)?,
            };
            Ok(ObsEval {
                mu,
                dmu: link.derivative(eta[i], e),
                nu: params.nu(),
                log_lambda: params.log_lambda(),
                mom: params.moment_functionals(),
                loglik: params.log_pmf(data.y[i]),
            })
        })
        .collect()
}

fn total_loglik(evals: &[ObsEval]) -> f64 {
    let terms: Vec<f64> = evals.iter().map(|e| e.loglik).collect();
    pairwise_sum(&terms)
}

fn beta_score_info(data: &GlmData, evals: &[ObsEval]) -> (DVector<f64>, DMatrix<f64>) {
    let q = data.x.n_cols();
    let mut score = DVector::zeros(q);
    let mut info = DMatrix::zeros(q, q);
    for (i, ev) in evals.iter().enumerate() {
        let x = data.x.matrix.row(i).transpose();
        score.axpy(ev.score_mu(data.y[i]) * ev.dmu, &x, 1.0);
        let w = if ev.mom.variance > 0.0 {
            ev.dmu * ev.dmu / ev.mom.variance
        } else {
            0.0
        };
        info.ger(w, &x, &x, 1.0);
    }
    (score, info)
}

fn dispersion_score_info(
    data: &GlmData,
    dispersion: &Dispersion,
    evals: &[ObsEval],
) -> (DVector<f64>, DMatrix<f64>) {
    match (dispersion, data.dispersion_x.as_ref()) {
        (Dispersion::Regression(gamma), Some(dx)) => {
            let k = gamma.len();
            let mut score = DVector::zeros(k);
            let mut info = DMatrix::zeros(k, k);
            for (i, ev) in evals.iter().enumerate() {
                let x = dx.matrix.row(i).transpose();
                score.axpy(ev.score_nu(data.y[i]) * ev.nu, &x, 1.0);
                info.ger(ev.mom.nu_information() * ev.nu * ev.nu, &x, &x, 1.0);
            }
            (score, info)
        }
        _ => {
            let s: Vec<f64> = evals
                .iter()
                .zip(&data.y)
                .map(|(ev, &y)| ev.score_nu(y))
                .collect();
            let info: Vec<f64> = evals.iter().map(|ev| ev.mom.nu_information()).collect();
            (
                DVector::from_element(1, pairwise_sum(&s)),
                DMatrix::from_element(1, 1, pairwise_sum(&info)),
            )
        }
    }
}

/// Condition number of the correlation-scaled matrix; invariant to column scaling.
fn scaled_condition(m: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = m.diagonal().iter().map(|v| v.sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (d[i] * d[j]));
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>, FitError> {
    let condition = scaled_condition(info);
    if !(condition <= MAX_CONDITION) {
        return Err(FitError::SingularInformation { condition });
    }
    let chol = info
        .clone()
        .cholesky()
        .ok_or(FitError::SingularInformation { condition })?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn solve_spd(info: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    info.clone().cholesky().map(|c| c.solve(rhs))
}

/// Log-likelihood at `state`.
pub fn log_likelihood(
    data: &GlmData,
    link: Link,
    state: &ParamState,
    opts: &FitOptions,
) -> Result<f64, FitError> {
    Ok(total_loglik(&evaluate(data, link, state, None, opts)?))
}

/// Stacked score `(S_beta, S_nu)` or `(S_beta, S_gamma)`, summed over observations.
pub fn score_vector(
    data: &GlmData,
    link: Link,
    state: &ParamState,
    opts: &FitOptions,
) -> Result<DVector<f64>, FitError> {
    let evals = evaluate(data, link, state, None, opts)?;
    let (sb, _) = beta_score_info(data, &evals);
    let (sd, _) = dispersion_score_info(data, &state.dispersion, &evals);
    Ok(DVector::from_iterator(
        sb.len() + sd.len(),
        sb.iter().chain(sd.iter()).copied(),
    ))
}

/// Per-observation scores: an `n x q` matrix for `beta` and an `n x k` matrix
/// for the dispersion parameters.
pub fn observation_scores(
    data: &GlmData,
    link: Link,
    state: &ParamState,
    opts: &FitOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>), FitError> {
    let evals = evaluate(data, link, state, None, opts)?;
    let n = data.n();
    let beta = DMatrix::from_fn(n, data.x.n_cols(), |i, j| {
        evals[i].score_mu(data.y[i]) * evals[i].dmu * data.x.matrix[(i, j)]
    });
    let disp = match (&state.dispersion, data.dispersion_x.as_ref()) {
        (Dispersion::Regression(_), Some(dx)) => DMatrix::from_fn(n, dx.n_cols(), |i, j| {
            evals[i].score_nu(data.y[i]) * evals[i].nu * dx.matrix[(i, j)]
        }),
        _ => DMatrix::from_fn(n, 1, |i, _| evals[i].score_nu(data.y[i])),
    };
    Ok((beta, disp))
}

/// Plug-in information blocks averaged over observations: the inverse
/// asymptotic variances of `beta` and of `nu` (or `gamma`).
pub fn fisher_blocks(
    data: &GlmData,
    link: Link,
    state: &ParamState,
    opts: &FitOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>), FitError> {
    let evals = evaluate(data, link, state, None, opts)?;
    let n = data.n() as f64;
    let (_, ib) = beta_score_info(data, &evals);
    let (_, id) = dispersion_score_info(data, &state.dispersion, &evals);
    for block in [&ib, &id] {
        let condition = scaled_condition(block);
        if !(condition <= MAX_CONDITION) {
            return Err(FitError::SingularInformation { condition });
        }
    }
    Ok((ib / n, id / n))
}

struct Optimizer<'a> {
    data: &'a GlmData,
    link: Link,
    opts: &'a FitOptions,
    state: ParamState,
    evals: Vec<ObsEval>,
    loglik: f64,
}

impl Optimizer<'_> {
    /// Tries `state + step * direction` with step halving; keeps the first
    /// candidate that does not lower the log-likelihood.
    fn line_search<F>(&mut self, make: F, direction_size: f64) -> Result<bool, FitError>
    where
        F: Fn(f64) -> ParamState,
    {
        let mut step = 1.0;
        for _ in 0..MAX_HALVINGS {
            if step * direction_size < 1e-14 {
                break;
            }
            let cand = make(step);
            match evaluate(self.data, self.link, &cand, Some(&self.evals), self.opts) {
                Ok(evals) => {
                    let ll = total_loglik(&evals);
                    // near the optimum the gain of a full step is below rounding noise
                    let noise = if step == 1.0 {
                        1e-12 * self.loglik.abs().max(1.0)
                    } else {
                        0.0
                    };
                    if ll >= self.loglik - noise {
                        self.state = cand;
                        self.evals = evals;
                        self.loglik = ll;
                        return Ok(true);
                    }
                }
                Err(FitError::MeanOverflow { .. })
                | Err(FitError::NonPositiveMean { .. })
                | Err(FitError::Distribution(_)) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        Ok(false)
    }

    /// Fisher scoring step for the mean coefficients at fixed dispersion.
    fn beta_step(&mut self) -> Result<bool, FitError> {
        let (score, info) = beta_score_info(self.data, &self.evals);
        let Some(delta) = solve_spd(&info, &score) else {
            return Err(FitError::SingularInformation {
                condition: scaled_condition(&info),
            });
        };
        let size = delta.amax() / (1.0 + self.state.beta.amax());
        let base = self.state.clone();
        self.line_search(
            |step| ParamState {
                beta: &base.beta + &delta * step,
                dispersion: base.dispersion.clone(),
            },
            size,
        )
    }

    /// Fisher scoring step for log(nu), or for gamma under a dispersion regression.
    fn dispersion_step(&mut self) -> Result<bool, FitError> {
        let (score, info) = dispersion_score_info(self.data, &self.state.dispersion, &self.evals);
        let base = self.state.clone();
        match &base.dispersion {
            Dispersion::Constant(nu) => {
                let nu = *nu;
                let i = info[(0, 0)];
                // d/d(log nu) of the log-likelihood is nu * S_nu
                let delta = if i > 0.0 {
                    (score[0] / (nu * i)).clamp(-3.0, 3.0)
                } else {
                    score[0].signum()
                };
                let log_nu = nu.ln();
                self.line_search(
                    |step| ParamState {
                        beta: base.beta.clone(),
                        dispersion: Dispersion::Constant((log_nu + step * delta).exp()),
                    },
                    delta.abs() / (1.0 + log_nu.abs()),
                )
            }
            Dispersion::Regression(gamma) => {
                let Some(delta) = solve_spd(&info, &score) else {
                    return Err(FitError::SingularInformation {
                        condition: scaled_condition(&info),
                    });
                };
                let size = delta.amax() / (1.0 + gamma.amax());
                self.line_search(
                    |step| ParamState {
                        beta: base.beta.clone(),
                        dispersion: Dispersion::Regression(gamma + &delta * step),
                    },
                    size,
                )
            }
        }
    }

    fn score_norm(&self, include_dispersion: bool) -> f64 {
        let (sb, _) = beta_score_info(self.data, &self.evals);
        let mut norm = sb.amax();
        if include_dispersion {
            let (sd, _) = dispersion_score_info(self.data, &self.state.dispersion, &self.evals);
            norm = norm.max(sd.amax());
        }
        norm
    }
}

fn weighted_least_squares(x: &DMatrix<f64>, w: &[f64], z: &[f64]) -> Option<DVector<f64>> {
    let q = x.ncols();
    let mut xtwx = DMatrix::zeros(q, q);
    let mut xtwz = DVector::zeros(q);
    for i in 0..x.nrows() {
        let row = x.row(i).transpose();
        xtwx.ger(w[i], &row, &row, 1.0);
        xtwz.axpy(w[i] * z[i], &row, 1.0);
    }
    solve_spd(&xtwx, &xtwz)
}

/// Poisson (nu = 1) starting values: one weighted least-squares step from
/// `mu = y + 0.5`, then Fisher scoring.
fn poisson_start(data: &GlmData, link: Link, opts: &FitOptions) -> Result<DVector<f64>, FitError> {
    let n = data.n();
    let mut w = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let e = data.exposure(i);
        let mu0 = data.y[i] as f64 + 0.5;
        let eta0 = link.predictor(mu0, e);
        let dmu = link.derivative(eta0, e);
        w.push(dmu * dmu / mu0);
        z.push(eta0 + (data.y[i] as f64 - mu0) / dmu);
    }
    let beta =
        weighted_least_squares(&data.x.matrix, &w, &z).ok_or(FitError::RankDeficientDesign {
            rank: data.x.rank(),
            cols: data.x.n_cols(),
        })?;
    let state = ParamState {
        beta,
        dispersion: Dispersion::Constant(1.0),
    };
    let evals = evaluate(data, link, &state, None, opts)?;
    let mut opt = Optimizer {
        data,
        link,
        opts,
        loglik: total_loglik(&evals),
        evals,
        state,
    };
    for _ in 0..50 {
        let before = opt.loglik;
        if !opt.beta_step()? || (opt.loglik - before).abs() <= 1e-12 * before.abs().max(1.0) {
            break;
        }
    }
    Ok(opt.state.beta)
}

fn validate(spec: &ModelSpec, data: &GlmData) -> Result<(), FitError> {
    let n = data.n();
    if data.x.n_rows() != n {
        return Err(FitError::Invalid(format!(
            "design has {} rows but {} responses",
            data.x.n_rows(),
            n
        )));
    }
    if let Some(e) = &data.exposure {
        if e.len() != n || e.iter().any(|v| !(*v > 0.0)) {
            return Err(FitError::Invalid(
                "exposures must be positive, one per row".into(),
            ));
        }
    }
    if let Some(nu) = spec.fixed_nu {
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(FitError::Invalid(format!(
                "fixed dispersion must be nonnegative, got {nu}"
            )));
        }
        if data.dispersion_x.is_some() {
            return Err(FitError::Invalid(
                "a fixed dispersion cannot be combined with dispersion terms".into(),
            ));
        }
    }
    let q = data.x.n_cols();
    let k = match (&spec.fixed_nu, &data.dispersion_x) {
        (Some(_), _) => 0,
        (None, Some(dx)) => dx.n_cols(),
        (None, None) => 1,
    };
    if n <= q + k {
        return Err(FitError::InsufficientData(format!(
            "{n} observations for {} parameters",
            q + k
        )));
    }
    let rank = data.x.rank();
    if rank < q {
        return Err(FitError::RankDeficientDesign { rank, cols: q });
    }
    if let Some(dx) = &data.dispersion_x {
        if dx.n_rows() != n {
            return Err(FitError::Invalid(
                "dispersion design row count mismatch".into(),
            ));
        }
        let rank = dx.rank();
        if rank < dx.n_cols() {
            return Err(FitError::RankDeficientDesign {
                rank,
                cols: dx.n_cols(),
            });
        }
    }
    Ok(())
}

/// Fits a CMP_mu regression by alternating Fisher scoring on the mean
/// coefficients and on the dispersion parameters. The two blocks are
/// orthogonal, so the cross information is ignored.
///
/// A fit that reaches the iteration cap is returned with `converged == false`.
pub fn fit_glm(
    spec: &ModelSpec,
    data: &GlmData,
    opts: &FitOptions,
) -> Result<FittedModel, FitError> {
    validate(spec, data)?;
    let link = spec.link;
    let free = spec.fixed_nu.is_none();

    let beta = poisson_start(data, link, opts)?;
    let dispersion = match (spec.fixed_nu, &data.dispersion_x) {
        (Some(nu), _) => Dispersion::Constant(nu),
        (None, Some(dx)) => Dispersion::Regression(DVector::zeros(dx.n_cols())),
        (None, None) => Dispersion::Constant(1.0),
    };
    let state = ParamState { beta, dispersion };
    let evals = evaluate(data, link, &state, None, opts)?;
    let mut opt = Optimizer {
        data,
        link,
        opts,
        loglik: total_loglik(&evals),
        evals,
        state,
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut score_norm = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        let before = opt.loglik;
        opt.beta_step()?;
        if free {
            opt.dispersion_step()?;
        }
        score_norm = opt.score_norm(free);
        let change = (opt.loglik - before).abs() / before.abs().max(1.0);
        if score_norm < opts.grad_tol && change < opts.loglik_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fit stopped after {iterations} iterations with score norm {score_norm:e}");
    }

    let (_, info_beta) = beta_score_info(data, &opt.evals);
    let cov_beta = invert_information(&info_beta)?;
    let (dispersion, cov_disp) = match (&opt.state.dispersion, spec.fixed_nu) {
        (Dispersion::Constant(nu), Some(_)) => {
            (DispersionFit::Fixed { nu: *nu }, DMatrix::zeros(0, 0))
        }
        (Dispersion::Constant(nu), None) => {
            let (_, info) = dispersion_score_info(data, &opt.state.dispersion, &opt.evals);
            (
                DispersionFit::Constant { nu: *nu },
                invert_information(&info)?,
            )
        }
        (Dispersion::Regression(gamma), _) => {
            let (_, info) = dispersion_score_info(data, &opt.state.dispersion, &opt.evals);
            let names = data
                .dispersion_x
                .as_ref()
                .map(|d| d.labels.clone())
                .unwrap_or_default();
            (
                DispersionFit::Regression {
                    names,
                    gamma: gamma.iter().copied().collect(),
                },
                invert_information(&info)?,
            )
        }
    };

    let mut model = FittedModel {
        link,
        coef_names: data.x.labels.clone(),
        beta: opt.state.beta.iter().copied().collect(),
        cov_beta,
        dispersion,
        cov_disp,
        loglik: opt.loglik,
        aic: 0.0,
        n_obs: data.n(),
        converged,
        iterations,
        score_norm,
        per_obs_mu: opt.evals.iter().map(|e| e.mu).collect(),
        per_obs_nu: opt.evals.iter().map(|e| e.nu).collect(),
    };
    model.aic = aic(model.loglik, model.n_params());
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::FittedModel;
    use crate::io::DesignMatrix;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(cols: Vec<Vec<f64>>, labels: &[&str]) -> DesignMatrix {
        let n = cols[0].len();
        DesignMatrix {
            matrix: DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            term_of_column: (0..cols.len())
                .map(|j| if j == 0 { None } else { Some(j - 1) })
                .collect(),
            reference_levels: Vec::new(),
        }
    }

    fn simulated(n: usize, nu: f64, seed: u64) -> GlmData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
            .collect();
        let y = (0..n)
            .map(|i| {
                let mu = (1.0 + 0.5 * x1[i] - 0.4 * x2[i]).exp();
                CmpParams::new(mu, nu).unwrap().draw(&mut rng)
            })
            .collect();
        GlmData::new(
            design(vec![vec![1.0; n], x1, x2], &["(Intercept)", "x1", "x2"]),
            y,
        )
    }

    fn spec() -> ModelSpec {
        ModelSpec::new("y", crate::io::Formula::default())
    }

    fn fit(data: &GlmData) -> FittedModel {
        fit_glm(&spec(), data, &FitOptions::default()).unwrap()
    }

    #[test]
    fn converges_and_scores_vanish() {
        let data = simulated(300, 1.8, 1);
        let m = fit(&data);
        assert!(m.converged, "score norm {}", m.score_norm);
        let s = score_vector(&data, Link::Log, &m.state(), &FitOptions::default()).unwrap();
        assert!(s.amax() < 1e-8);
        assert_abs_diff_eq!(m.aic, -2.0 * m.loglik + 8.0, epsilon = 1e-9);
        assert_eq!(m.per_obs_mu.len(), 300);
    }

    #[test]
    fn covariances_are_symmetric_psd() {
        let data = simulated(300, 0.6, 2);
        let m = fit(&data);
        for c in [&m.cov_beta, &m.cov_disp] {
            assert_abs_diff_eq!((c - c.transpose()).amax(), 0.0, epsilon = 1e-15);
            assert!(c.clone().symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let data = simulated(60, 1.3, 3);
        let opts = FitOptions::default();
        let state = ParamState {
            beta: DVector::from_vec(vec![0.8, 0.3, -0.2]),
            dispersion: Dispersion::Constant(1.7),
        };
        let s = score_vector(&data, Link::Log, &state, &opts).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let shifted = |d: f64| {
                let mut st = state.clone();
                if j < 3 {
                    st.beta[j] += d;
                } else if let Dispersion::Constant(nu) = &mut st.dispersion {
                    *nu += d;
                }
                log_likelihood(&data, Link::Log, &st, &opts).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!(
                (fd - s[j]).abs() <= 1e-5 * s[j].abs().max(1.0),
                "j={j} fd={fd} s={}",
                s[j]
            );
        }
    }

    #[test]
    fn single_observation_at_its_mean_has_zero_beta_score() {
        let data = GlmData::new(
            design(vec![vec![1.0], vec![0.7]], &["(Intercept)", "x"]),
            vec![4],
        );
        let beta = DVector::from_vec(vec![4f64.ln() - 0.7 * 0.5, 0.5]);
        let state = ParamState {
            beta,
            dispersion: Dispersion::Constant(2.3),
        };
        let s = score_vector(&data, Link::Log, &state, &FitOptions::default()).unwrap();
        assert!(s[0].abs() < 1e-10 && s[1].abs() < 1e-10);
    }

    #[test]
    fn poisson_information_at_unit_dispersion() {
        let data = simulated(50, 1.0, 4);
        let state = ParamState {
            beta: DVector::from_vec(vec![0.9, 0.4, -0.3]),
            dispersion: Dispersion::Constant(1.0),
        };
        let (w1, _) = fisher_blocks(&data, Link::Log, &state, &FitOptions::default()).unwrap();
        let eta = &data.x.matrix * &state.beta;
        let mut expected = DMatrix::zeros(3, 3);
        for i in 0..50 {
            let x = data.x.matrix.row(i).transpose();
            expected += eta[i].exp() * &x * x.transpose();
        }
        expected /= 50.0;
        assert!((w1 - expected).amax() < 1e-9);
    }

    #[test]
    fn intercept_only_delta_method() {
        let data = simulated(400, 1.6, 5);
        let x = DesignMatrix::intercept_only(400);
        let d = GlmData::new(x, data.y.clone());
        let m = fit(&d);
        let mu = m.per_obs_mu[0];
        let ybar = d.y.iter().sum::<u64>() as f64 / 400.0;
        assert_abs_diff_eq!(mu, ybar, epsilon = 1e-9);
        let v = CmpParams::new(mu, m.nu().unwrap())
            .unwrap()
            .moment_functionals()
            .variance;
        assert_abs_diff_eq!(m.cov_beta[(0, 0)], v / (400.0 * mu * mu), epsilon = 1e-10);
    }

    #[test]
    fn loglik_is_monotone_over_iterations() {
        let data = simulated(200, 0.5, 6);
        let mut last = f64::NEG_INFINITY;
        for iters in 1..8 {
            let opts = FitOptions {
                max_iter: iters,
                ..FitOptions::default()
            };
            let m = fit_glm(&spec(), &data, &opts).unwrap();
            assert!(m.loglik >= last - 1e-9);
            last = m.loglik;
        }
    }

    #[test]
    fn fixed_dispersion_and_identity_link() {
        let data = simulated(200, 1.0, 7);
        let m = fit_glm(&spec().with_fixed_nu(1.0), &data, &FitOptions::default()).unwrap();
        assert_eq!(m.dispersion, DispersionFit::Fixed { nu: 1.0 });
        assert_eq!(m.n_params(), 3);
        assert_eq!(m.cov_disp.nrows(), 0);

        let x = DesignMatrix::intercept_only(200);
        let d = GlmData::new(x, data.y.clone());
        let m = fit_glm(
            &spec().with_link(Link::Identity),
            &d,
            &FitOptions::default(),
        )
        .unwrap();
        let ybar = d.y.iter().sum::<u64>() as f64 / 200.0;
        assert_abs_diff_eq!(m.beta[0], ybar, epsilon = 1e-9);
    }

    #[test]
    fn dispersion_regression_recovers_signs() {
        let n = 1500;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let y = (0..n)
            .map(|i| {
                let nu = (0.0 + 1.0 * z[i]).exp();
                CmpParams::new(4.0, nu).unwrap().draw(&mut rng)
            })
            .collect();
        let mut data = GlmData::new(DesignMatrix::intercept_only(n), y);
        data.dispersion_x = Some(design(vec![vec![1.0; n], z], &["(Intercept)", "z"]));
        let m = fit(&data);
        assert!(m.converged);
        match &m.dispersion {
            DispersionFit::Regression { gamma, names } => {
                assert_eq!(names[1], "z");
                let se = m.se_dispersion();
                assert!((gamma[0] - 0.0).abs() < 4.0 * se[0]);
                assert!((gamma[1] - 1.0).abs() < 4.0 * se[1]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(m.n_params(), 3);
    }

    #[test]
    fn error_paths() {
        let data = simulated(20, 1.0, 9);
        let mut bad = data.clone();
        bad.x
            .matrix
            .set_column(2, &bad.x.matrix.column(1).clone_owned());
        assert!(matches!(
            fit_glm(&spec(), &bad, &FitOptions::default()),
            Err(FitError::RankDeficientDesign { .. })
        ));
        let tiny = GlmData::new(DesignMatrix::intercept_only(2), vec![1, 2]);
        assert!(matches!(
            fit_glm(&spec(), &tiny, &FitOptions::default()),
            Err(FitError::InsufficientData(_))
        ));
        let capped = FitOptions {
            mean_cap: 1.0,
            ..FitOptions::default()
        };
        assert!(matches!(
            fit_glm(&spec(), &data, &capped),
            Err(FitError::MeanOverflow { .. })
        ));
    }
}
