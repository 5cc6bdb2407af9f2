use clap::{Args, Parser, Subcommand, ValueEnum};
use cmpmu::diagnostics::{pit, pit_histogram, pit_quantile_table};
use cmpmu::distribution::CmpParams;
use cmpmu::fit::{
    fit_glm, DispersionFit, FitError, FitOptions, FittedModel, GlmData, Link, ModelSpec,
};
use cmpmu::inference::{
    coefficient_table, lrt_composite, lrt_poisson, wald_test, CoefficientRow, Hypothesis,
    TestResult,
};
use cmpmu::io::summary::{summarize, ColumnSummary};
use cmpmu::io::{load_csv, sig6, Dataset, Formula};
use cmpmu::simulate::{run_study, StudyConfig};
use serde::Serialize;
use std::error::Error;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// `println!` that reports write failures (e.g. a closed pipe) instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*)?
    };
}

/// Mean-parametrized Conway-Maxwell-Poisson regression for count data.
#[derive(Parser)]
#[command(name = "cmpmu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a regression model and print a JSON report.
    Fit(FitArgs),
    /// Likelihood-ratio or Wald test; prints JSON.
    Test(TestArgs),
    /// Randomized PIT tables (TSV).
    Pit(PitArgs),
    /// Run a simulation study from a key = value config file (TSV).
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-column summary statistics.
    Summarize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Probability mass tables for every (mu, nu) pair (TSV).
    PmfTable {
        /// Comma-separated means.
        #[arg(long, value_delimiter = ',', required = true)]
        mu: Vec<f64>,
        /// Comma-separated dispersions.
        #[arg(long, value_delimiter = ',', required = true)]
        nu: Vec<f64>,
        #[arg(long, default_value_t = 30)]
        max_y: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PitTable {
    Quantile,
    Histogram,
}

#[derive(Args, Clone)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// Mean-model terms, e.g. "x + g + x:g + z^2". Empty for intercept only.
    #[arg(long, default_value = "")]
    terms: String,
    /// Dispersion-model terms; a constant dispersion is fitted when omitted.
    #[arg(long)]
    dispersion_terms: Option<String>,
    /// Exposure column multiplying the mean.
    #[arg(long)]
    offset: Option<String>,
    #[arg(long, default_value = "log")]
    link: Link,
    #[arg(long)]
    fixed_nu: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Recorded in the report; fitting itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Terms of the restricted model (nested in the full one).
    #[arg(long, conflicts_with_all = ["poisson", "wald"])]
    restricted_terms: Option<String>,
    /// Test nu = 1.
    #[arg(long, conflicts_with = "wald")]
    poisson: bool,
    /// Comma-separated coefficient labels to test jointly against zero.
    #[arg(long, value_delimiter = ',')]
    wald: Option<Vec<String>>,
    /// Skip the F calibration of the likelihood-ratio test.
    #[arg(long)]
    no_f: bool,
}

#[derive(Args)]
struct PitArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, value_enum, default_value_t = PitTable::Quantile)]
    table: PitTable,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

impl FitArgs {
    fn spec(&self, terms: &str) -> Result<ModelSpec, Box<dyn Error>> {
        let mut spec = ModelSpec::new(&self.response, Formula::parse(terms)?).with_link(self.link);
        if let Some(d) = &self.dispersion_terms {
            spec = spec.with_dispersion_terms(Formula::parse(d)?);
        }
        if let Some(o) = &self.offset {
            spec = spec.with_offset(o);
        }
        if let Some(nu) = self.fixed_nu {
            spec = spec.with_fixed_nu(nu);
        }
        Ok(spec)
    }

    fn options(&self) -> FitOptions {
        let mut opts = FitOptions::default();
        if let Some(m) = self.max_iter {
            opts.max_iter = m;
        }
        opts
    }

    /// Complete cases over every column the full model uses.
    fn dataset(&self, spec: &ModelSpec) -> Result<Dataset, Box<dyn Error>> {
        let data = load_csv(&self.data)?;
        let mut used: Vec<&str> = vec![&spec.response];
        used.extend(spec.mean_terms.variables());
        if let Some(d) = &spec.dispersion_terms {
            used.extend(d.variables());
        }
        if let Some(o) = &spec.offset {
            used.push(o);
        }
        let (data, dropped) = data.complete_cases(&used)?;
        if dropped > 0 {
            eprintln!("dropped {dropped} rows with missing values");
        }
        Ok(data)
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DispersionReport {
    Fixed { nu: f64 },
    Constant { nu: f64, se: f64 },
    Regression { coefficients: Vec<CoefficientRow> },
}

#[derive(Serialize)]
struct FitReport {
    response: String,
    link: Link,
    n: usize,
    coefficients: Vec<CoefficientRow>,
    dispersion: DispersionReport,
    loglik: f64,
    aic: f64,
    n_params: usize,
    converged: bool,
    iterations: usize,
    score_norm: f64,
    reference_levels: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn fit_report(args: &FitArgs, data: &GlmData, m: &FittedModel) -> FitReport {
    let dispersion = match &m.dispersion {
        DispersionFit::Fixed { nu } => DispersionReport::Fixed { nu: *nu },
        DispersionFit::Constant { nu } => DispersionReport::Constant {
            nu: *nu,
            se: m.se_dispersion()[0],
        },
        DispersionFit::Regression { names, gamma } => DispersionReport::Regression {
            coefficients: coefficient_table(&FittedModel {
                coef_names: names.clone(),
                beta: gamma.clone(),
                cov_beta: m.cov_disp.clone(),
                ..m.clone()
            }),
        },
    };
    let mut reference_levels = data.x.reference_levels.clone();
    if let Some(dx) = &data.dispersion_x {
        for r in &dx.reference_levels {
            if !reference_levels.contains(r) {
                reference_levels.push(r.clone());
            }
        }
    }
    FitReport {
        response: args.response.clone(),
        link: m.link,
        n: m.n_obs,
        coefficients: coefficient_table(m),
        dispersion,
        loglik: m.loglik,
        aic: m.aic,
        n_params: m.n_params(),
        converged: m.converged,
        iterations: m.iterations,
        score_norm: m.score_norm,
        reference_levels,
        seed: args.seed,
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Box<dyn Error>> {
    out!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn converged_code(models: &[&FittedModel]) -> u8 {
    if models.iter().all(|m| m.converged) {
        0
    } else {
        eprintln!("warning: the optimizer did not converge");
        2
    }
}

fn fit_model(
    args: &FitArgs,
    spec: &ModelSpec,
    data: &Dataset,
) -> Result<(GlmData, FittedModel), Box<dyn Error>> {
    let glm = spec.prepare(data)?;
    let model = fit_glm(spec, &glm, &args.options())?;
    Ok((glm, model))
}

fn cmd_fit(args: &FitArgs) -> Result<u8, Box<dyn Error>> {
    let spec = args.spec(&args.terms)?;
    let data = args.dataset(&spec)?;
    let (glm, model) = fit_model(args, &spec, &data)?;
    print_json(&fit_report(args, &glm, &model))?;
    Ok(converged_code(&[&model]))
}

#[derive(Serialize)]
struct TestReport {
    #[serde(flatten)]
    result: TestResult,
    full_loglik: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    restricted_loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'static str>,
}

fn cmd_test(args: &TestArgs) -> Result<u8, Box<dyn Error>> {
    let spec = args.fit.spec(&args.fit.terms)?;
    let data = args.fit.dataset(&spec)?;
    let (_, full) = fit_model(&args.fit, &spec, &data)?;

    if let Some(labels) = &args.wald {
        let idx = labels
            .iter()
            .map(|l| {
                full.coef_names
                    .iter()
                    .position(|n| n == l.trim())
                    .ok_or_else(|| format!("unknown coefficient {l:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let h = Hypothesis::zero_coefficients(full.n_mean_params(), &idx)?;
        print_json(&TestReport {
            result: wald_test(&full, &h)?,
            full_loglik: full.loglik,
            restricted_loglik: None,
            dropped: Some(labels.clone()),
            note: None,
        })?;
        return Ok(converged_code(&[&full]));
    }

    if args.poisson {
        if spec.fixed_nu.is_some() || spec.dispersion_terms.is_some() {
            return Err(
                "--poisson needs a constant, estimated dispersion in the full model".into(),
            );
        }
        let pois_spec = spec.clone().with_fixed_nu(1.0);
        let (_, pois) = fit_model(&args.fit, &pois_spec, &data)?;
        print_json(&TestReport {
            result: lrt_poisson(&full, &pois)?,
            full_loglik: full.loglik,
            restricted_loglik: Some(pois.loglik),
            dropped: None,
            note: None,
        })?;
        return Ok(converged_code(&[&full, &pois]));
    }

    let Some(restricted_terms) = &args.restricted_terms else {
        return Err("one of --restricted-terms, --poisson or --wald is required".into());
    };
    let mut rspec = spec.clone();
    rspec.mean_terms = Formula::parse(restricted_terms)?;
    let (_, restricted) = fit_model(&args.fit, &rspec, &data)?;
    if let Some(extra) = restricted
        .coef_names
        .iter()
        .find(|n| !full.coef_names.contains(n))
    {
        return Err(format!(
            "restricted model is not nested: column {extra} is absent from the full model"
        )
        .into());
    }
    let r = full.n_mean_params() - restricted.n_mean_params();
    if r == 0 {
        return Err("the restricted model has as many coefficients as the full model".into());
    }
    let dropped = full
        .coef_names
        .iter()
        .filter(|n| !restricted.coef_names.contains(n))
        .cloned()
        .collect();
    print_json(&TestReport {
        result: lrt_composite(&full, &restricted, r, !args.no_f)?,
        full_loglik: full.loglik,
        restricted_loglik: Some(restricted.loglik),
        dropped: Some(dropped),
        note: (!args.no_f).then_some("F denominator df is n minus the number of mean coefficients"),
    })?;
    Ok(converged_code(&[&full, &restricted]))
}

fn cmd_pit(args: &PitArgs) -> Result<u8, Box<dyn Error>> {
    let seed = args.fit.seed.ok_or("pit requires --seed")?;
    let spec = args.fit.spec(&args.fit.terms)?;
    let data = args.fit.dataset(&spec)?;
    let (glm, model) = fit_model(&args.fit, &spec, &data)?;
    let sample = pit(&model, &glm.y, seed)?;
    eprintln!("seed {seed}, KS statistic {}", sig6(sample.ks_statistic));
    match args.table {
        PitTable::Quantile => {
            out!("uniform_quantile\tpit_quantile");
            for (p, q) in pit_quantile_table(&sample, args.grid)? {
                out!("{}\t{}", sig6(p), sig6(q));
            }
        }
        PitTable::Histogram => {
            out!("lower\tupper\tcount");
            for b in pit_histogram(&sample, args.bins)? {
                out!("{}\t{}\t{}", sig6(b.lower), sig6(b.upper), b.count);
            }
        }
    }
    Ok(converged_code(&[&model]))
}

fn cmd_simulate(config: &Path) -> Result<u8, Box<dyn Error>> {
    let config = StudyConfig::from_file(config)?;
    let report = run_study(&config, &FitOptions::default())?;
    write!(std::io::stdout(), "{}", report.to_tsv())?;
    Ok(0)
}

fn cmd_summarize(data: &PathBuf, format: Format) -> Result<u8, Box<dyn Error>> {
    let summaries = summarize(&load_csv(data)?);
    match format {
        Format::Json => print_json(&summaries)?,
        Format::Tsv => {
            out!("column\tkind\tn\tmin\tmax\tmean\tsd\tpercentage");
            for s in summaries {
                match s {
                    ColumnSummary::Numeric {
                        name,
                        n,
                        min,
                        max,
                        mean,
                        sd,
                    } => out!(
                        "{name}\tnumeric\t{n}\t{}\t{}\t{}\t{}\tNA",
                        sig6(min),
                        sig6(max),
                        sig6(mean),
                        sig6(sd)
                    ),
                    ColumnSummary::Binary {
                        name,
                        n,
                        percentage,
                    } => {
                        out!("{name}\tbinary\t{n}\tNA\tNA\tNA\tNA\t{}", sig6(percentage))
                    }
                    ColumnSummary::Categorical { name, n, levels } => {
                        for (level, pct) in levels {
                            out!(
                                "{name}={level}\tcategorical\t{n}\tNA\tNA\tNA\tNA\t{}",
                                sig6(pct)
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(0)
}

fn cmd_pmf_table(mu: &[f64], nu: &[f64], max_y: u64) -> Result<u8, Box<dyn Error>> {
    out!("mu\tnu\ty\tpmf");
    for &m in mu {
        for &v in nu {
            let p = CmpParams::new(m, v)?;
            for y in 0..=max_y {
                out!("{}\t{}\t{y}\t{}", sig6(m), sig6(v), sig6(p.pmf(y)));
            }
        }
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Box<dyn Error>> {
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Test(args) => cmd_test(args),
        Command::Pit(args) => cmd_pit(args),
        Command::Simulate { config } => cmd_simulate(config),
        Command::Summarize { data, format } => cmd_summarize(data, *format),
        Command::PmfTable { mu, nu, max_y } => cmd_pmf_table(mu, nu, *max_y),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let no_convergence = e
                .downcast_ref::<FitError>()
                .is_some_and(|f| matches!(f, FitError::NoConvergence { .. }));
            ExitCode::from(if no_convergence { 2 } else { 1 })
        }
    }
}
