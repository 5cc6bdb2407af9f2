//! Seeded simulation studies of test calibration under covariate resampling.

use crate::distribution::CmpParams;
use crate::fit::{fit_glm, FitError, FitOptions, GlmData, Link, ModelSpec};
use crate::inference::{lrt_composite, lrt_poisson};
use crate::io::{build_design, load_csv, DataError, Dataset, DesignMatrix, Formula};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("generator misspecified: {0}")]
    GeneratorMisspecified(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    CmpMu,
    Poisson,
}

/// True model responses are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub family: Family,
    pub link: Link,
    /// One coefficient per design column.
    pub beta: Vec<f64>,
    pub nu: f64,
}

impl Generator {
    fn nu(&self) -> f64 {
        match self.family {
            Family::CmpMu => self.nu,
            Family::Poisson => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StudyTest {
    /// Drop every design column generated by these formula terms; LRT with F calibration.
    DropTerms(Vec<usize>),
    /// `nu = 1` against a free constant dispersion.
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub generator: Generator,
    /// Full design over the covariate source; rows are resampled from it.
    pub covariates: DesignMatrix,
    pub test: StudyTest,
    pub n_per_dataset: usize,
    pub n_replicates: usize,
    pub nominal_levels: Vec<f64>,
    pub base_seed: u64,
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, SimError> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| SimError::Config(format!("{key}: cannot parse {:?}", s.trim())))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SimError> {
    value
        .parse()
        .map_err(|_| SimError::Config(format!("{key}: cannot parse {value:?}")))
}

impl StudyConfig {
    /// Reads a `key = value` study file. A relative `data` path is resolved
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Keys: `data`, `terms`, `test` (`drop` or `poisson`), `drop`, `link`,
    /// `family` (`cmp_mu` or `poisson`), `beta`, `nu`, `n`, `replicates`,
    /// `levels`, `seed`. Lines starting with `#` are ignored.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, SimError> {
        let mut kv = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SimError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let k = k.trim().to_string();
            const KEYS: [&str; 12] = [
                "data",
                "terms",
                "test",
                "drop",
                "link",
                "family",
                "beta",
                "nu",
                "n",
                "replicates",
                "levels",
                "seed",
            ];
            if !KEYS.contains(&k.as_str()) {
                return Err(SimError::Config(format!(
                    "line {}: unknown key {k:?}",
                    lineno + 1
                )));
            }
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(SimError::Config(format!("duplicate key {k:?}")));
            }
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| SimError::Config(format!("missing key {k:?}")))
        };

        let data_path = base_dir.join(get("data")?);
        let terms = Formula::parse(get("terms")?).map_err(SimError::Data)?;
        let data = load_csv(&data_path)?;
        let family = match kv.get("family").map(String::as_str).unwrap_or("cmp_mu") {
            "cmp_mu" => Family::CmpMu,
            "poisson" => Family::Poisson,
            other => return Err(SimError::Config(format!("unknown family {other:?}"))),
        };
        let link: Link = kv
            .get("link")
            .map(|s| s.parse())
            .transpose()
            .map_err(SimError::Config)?
            .unwrap_or(Link::Log);
        let nu = match kv.get("nu") {
            Some(v) => parse_one("nu", v)?,
            None => 1.0,
        };
        let test = match kv.get("test").map(String::as_str).unwrap_or("drop") {
            "drop" => {
                let drop = Formula::parse(get("drop")?).map_err(SimError::Data)?;
                let idx = drop
                    .terms
                    .iter()
                    .map(|t| {
                        terms.terms.iter().position(|u| u == t).ok_or_else(|| {
                            SimError::Config(format!("dropped term {t} is not in terms"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                StudyTest::DropTerms(idx)
            }
            "poisson" => StudyTest::Poisson,
            other => return Err(SimError::Config(format!("unknown test {other:?}"))),
        };
        let config = StudyConfig::from_dataset(
            &data,
            &terms,
            Generator {
                family,
                link,
                beta: parse_list("beta", get("beta")?)?,
                nu,
            },
            test,
            parse_one("n", get("n")?)?,
            parse_one("replicates", get("replicates")?)?,
            match kv.get("levels") {
                Some(v) => parse_list("levels", v)?,
                None => vec![0.01, 0.05, 0.10],
            },
            match kv.get("seed") {
                Some(v) => parse_one("seed", v)?,
                None => 0,
            },
        )?;
        Ok(config)
    }

    /// Builds the covariate design from complete cases of `data` and validates.
    #[allow(clippy::too_many_arguments)]
    pub fn from_dataset(
        data: &Dataset,
        terms: &Formula,
        generator: Generator,
        test: StudyTest,
        n_per_dataset: usize,
        n_replicates: usize,
        nominal_levels: Vec<f64>,
        base_seed: u64,
    ) -> Result<Self, SimError> {
        let (data, _) = data.complete_cases(&terms.variables())?;
        let config = StudyConfig {
            generator,
            covariates: build_design(&data, terms)?,
            test,
            n_per_dataset,
            n_replicates,
            nominal_levels,
            base_seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let q = self.covariates.n_cols();
        if self.generator.beta.len() != q {
            return Err(SimError::GeneratorMisspecified(format!(
                "{} coefficients for {q} design columns ({})",
                self.generator.beta.len(),
                self.covariates.labels.join(", ")
            )));
        }
        if self.generator.beta.iter().any(|b| !b.is_finite()) {
            return Err(SimError::GeneratorMisspecified(
                "non-finite coefficient".into(),
            ));
        }
        if self.generator.family == Family::CmpMu
            && !(self.generator.nu >= 0.0 && self.generator.nu.is_finite())
        {
            return Err(SimError::GeneratorMisspecified(format!(
                "dispersion must be nonnegative, got {}",
                self.generator.nu
            )));
        }
        if self.generator.family == Family::Poisson && self.generator.nu != 1.0 {
            return Err(SimError::GeneratorMisspecified(
                "the Poisson family has unit dispersion".into(),
            ));
        }
        if self.n_per_dataset < q + 2 {
            return Err(SimError::Config(format!(
                "n = {} is too small for {q} mean parameters",
                self.n_per_dataset
            )));
        }
        if self.n_replicates == 0 {
            return Err(SimError::Config("replicates must be positive".into()));
        }
        if self.nominal_levels.is_empty()
            || self.nominal_levels.iter().any(|a| !(*a > 0.0 && *a < 1.0))
        {
            return Err(SimError::Config("levels must lie in (0, 1)".into()));
        }
        if let StudyTest::DropTerms(terms) = &self.test {
            let max_term = self.covariates.term_of_column.iter().flatten().max();
            if terms.iter().any(|t| Some(t) > max_term) {
                return Err(SimError::Config("dropped term index out of range".into()));
            }
        }
        Ok(())
    }
}

/// Resamples `n` rows of `covariates` with replacement and draws responses
/// from `generator`. Deterministic given `seed`.
pub fn simulate_dataset(
    generator: &Generator,
    covariates: &DesignMatrix,
    n: usize,
    seed: u64,
    mean_cap: f64,
) -> Result<GlmData, FitError> {
    if covariates.n_rows() == 0 {
        return Err(FitError::InsufficientData("empty covariate source".into()));
    }
    if generator.beta.len() != covariates.n_cols() {
        return Err(FitError::Invalid("coefficient length mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..covariates.n_rows()))
        .collect();
    let x = covariates.select_rows(&rows);
    let eta = &x.matrix * DVector::from_column_slice(&generator.beta);
    let nu = generator.nu();
    let mut y = Vec::with_capacity(n);
    for (i, &e) in eta.iter().enumerate() {
        let mu = generator.link.mean(e, 1.0);
        if !mu.is_finite() || mu > mean_cap {
            return Err(FitError::MeanOverflow { index: i, mu });
        }
        if mu <= 0.0 && generator.link == Link::Identity {
            return Err(FitError::NonPositiveMean { index: i });
        }
        y.push(CmpParams::new(mu, nu)?.draw(&mut rng));
    }
    Ok(GlmData::new(x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    pub level: f64,
    pub rejections_f: usize,
    pub rejections_chi2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub levels: Vec<LevelRow>,
    /// Replicates that produced a test result.
    pub n_used: usize,
    /// Replicates excluded because a fit failed or did not converge.
    pub n_failed: usize,
    /// Whether F calibration applies (drop-terms studies only).
    pub f_calibrated: bool,
}

impl StudyReport {
    pub fn rate(&self, rejections: usize) -> f64 {
        if self.n_used == 0 {
            f64::NAN
        } else {
            rejections as f64 / self.n_used as f64
        }
    }

    /// Binomial standard error of a rejection rate.
    pub fn standard_error(&self, rejections: usize) -> f64 {
        let p = self.rate(rejections);
        (p * (1.0 - p) / self.n_used as f64).sqrt()
    }

    /// Rejection rate used for calibration: F-calibrated when available.
    pub fn primary_rate(&self, row: &LevelRow) -> f64 {
        self.rate(if self.f_calibrated {
            row.rejections_f
        } else {
            row.rejections_chi2
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("level\trate_f\tse_f\trate_chi2\tse_chi2\tn_used\tn_failed\n");
        for row in &self.levels {
            let (rf, sf) = if self.f_calibrated {
                (
                    format!("{:.6}", self.rate(row.rejections_f)),
                    format!("{:.6}", self.standard_error(row.rejections_f)),
                )
            } else {
                ("NA".to_string(), "NA".to_string())
            };
            let _ = writeln!(
                out,
                "{}\t{rf}\t{sf}\t{:.6}\t{:.6}\t{}\t{}",
                row.level,
                self.rate(row.rejections_chi2),
                self.standard_error(row.rejections_chi2),
                self.n_used,
                self.n_failed
            );
        }
        out
    }
}

/// `(p_f, p_chi2)` for one replicate, or `None` when it must be excluded.
fn replicate(config: &StudyConfig, k: usize, opts: &FitOptions) -> Option<(Option<f64>, f64)> {
    let seed = config.base_seed.wrapping_add(k as u64);
    let data = match simulate_dataset(
        &config.generator,
        &config.covariates,
        config.n_per_dataset,
        seed,
        opts.mean_cap,
    ) {
        Ok(d) => d,
        Err(e) => {
            log::debug!("replicate {k}: simulation failed: {e}");
            return None;
        }
    };
    let spec = ModelSpec::new("y", Formula::default()).with_link(config.generator.link);
    let fit = |spec: &ModelSpec, data: &GlmData| match fit_glm(spec, data, opts) {
        Ok(m) if m.converged => Some(m),
        Ok(_) => {
            log::debug!("replicate {k}: fit did not converge");
            None
        }
        Err(e) => {
            log::debug!("replicate {k}: fit failed: {e}");
            None
        }
    };
    let full = fit(&spec, &data)?;
    let result = match &config.test {
        StudyTest::DropTerms(terms) => {
            let mut restricted_data = data.clone();
            restricted_data.x = data.x.drop_terms(terms);
            let r = data.x.n_cols() - restricted_data.x.n_cols();
            if r == 0 {
                return Some((Some(1.0), 1.0));
            }
            let restricted = fit(&spec, &restricted_data)?;
            lrt_composite(&full, &restricted, r, true)
        }
        StudyTest::Poisson => {
            let pois = fit(&spec.clone().with_fixed_nu(1.0), &data)?;
            lrt_poisson(&full, &pois)
        }
    };
    match result {
        Ok(t) => Some((t.p_f, t.p_chi2)),
        Err(e) => {
            log::debug!("replicate {k}: test failed: {e}");
            None
        }
    }
}

/// Runs all replicates (in parallel) and tallies rejections at each nominal level.
pub fn run_study(config: &StudyConfig, opts: &FitOptions) -> Result<StudyReport, SimError> {
    config.validate()?;
    let outcomes: Vec<Option<(Option<f64>, f64)>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|k| replicate(config, k, opts))
        .collect();
    let used: Vec<(Option<f64>, f64)> = outcomes.iter().flatten().copied().collect();
    let n_failed = outcomes.len() - used.len();
    if n_failed > 0 {
        log::warn!("{n_failed} of {} replicates excluded", outcomes.len());
    }
    let levels = config
        .nominal_levels
        .iter()
        .map(|&level| LevelRow {
            level,
            rejections_f: used
                .iter()
                .filter(|(pf, _)| pf.is_some_and(|p| p < level))
                .count(),
            rejections_chi2: used.iter().filter(|(_, pc)| *pc < level).count(),
        })
        .collect();
    Ok(StudyReport {
        levels,
        n_used: used.len(),
        n_failed,
        f_calibrated: matches!(config.test, StudyTest::DropTerms(_)),
    })
}
