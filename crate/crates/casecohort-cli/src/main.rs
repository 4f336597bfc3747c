//! `casecohort`: risk-ratio estimation for case-cohort studies.
//!
//! Subcommands: `fit` (analyze stacked CSV data), `simulate` (run a Monte
//! Carlo scenario from a config file), `calibrate` (solve the generating
//! intercept for a target event rate).
//!
//! Exit codes: 0 success, 2 input/validation error, 3 computation failure.

mod config;
mod input;
mod render;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};

use casecohort::{
    bootstrap_variance, calibrate_intercept, fit_logistic, marginal_event_rate, model_covariance,
    robust_covariance, run_scenario, wald_ci, x1_prevalence, BootstrapOptions, BootstrapStrategy,
    Error as LibError, FitOptions, ProgressSink, SeedTree,
};

use config::StudyConfig;
use input::read_stacked_csv;
use render::{FitReport, MethodColumn};

/// Errors carrying their exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or invalid input: exit code 2.
    Input(String),
    /// A well-formed request that failed numerically: exit code 3.
    Compute(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn compute(msg: impl fmt::Display) -> Self {
        CliError::Compute(msg.to_string())
    }

    /// Classify a library error: contract/input problems vs numeric
    /// failures of a valid request.
    pub fn from_lib(err: LibError) -> Self {
        match err {
            LibError::InvalidArgument(_)
            | LibError::DimensionMismatch { .. }
            | LibError::UnknownId(_)
            | LibError::InvalidModel(_) => CliError::Input(err.to_string()),
            LibError::Separation { .. }
            | LibError::SingularInformation
            | LibError::NotConverged
            | LibError::Calibration(_)
            | LibError::BootstrapExhausted { .. }
            | LibError::TooManyFailures { .. } => CliError::Compute(err.to_string()),
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "{msg}"),
            CliError::Compute(msg) => write!(f, "computation failed: {msg}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "casecohort",
    version,
    about = "Risk-ratio estimation for case-cohort studies with duplication-aware bootstrap standard errors"
)]
struct Cli {
    /// Worker threads for parallel sections. Defaults to all cores, or
    /// the RAYON_NUM_THREADS environment variable when set.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit stacked case-cohort data from a CSV file
    Fit(FitArgs),
    /// Run a Monte Carlo scenario from a config file
    Simulate(SimulateArgs),
    /// Calibrate the generating intercept for a target event rate
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with one row per stacked sample
    #[arg(long)]
    data: PathBuf,
    /// Name of the 0/1 outcome-indicator column
    #[arg(long)]
    outcome: String,
    /// Comma-separated covariate column names
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// Participant id column; required for the proposed bootstrap so
    /// duplicated participants can be identified
    #[arg(long)]
    id: Option<String>,
    /// Bootstrap standard errors to compute in addition to model/robust
    #[arg(long, value_enum)]
    boot: Option<BootChoice>,
    /// Bootstrap replicates
    #[arg(long, default_value_t = 2000)]
    b: usize,
    /// Confidence level for Wald intervals
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Master seed for bootstrap resampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the machine-readable report to this path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum BootChoice {
    Naive,
    Proposed,
    Both,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario configuration file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Write the machine-readable report to this path
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config bootstrap replicate count
    #[arg(long)]
    b: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Scenario configuration file providing the generating model
    #[arg(long)]
    config: PathBuf,
    /// Target marginal event rate (defaults to the config's target_rate)
    #[arg(long)]
    target_rate: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure the thread pool");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::input(format!(
            "--level must be in (0, 1), got {}",
            args.level
        )));
    }
    let wants_proposed = matches!(args.boot, Some(BootChoice::Proposed | BootChoice::Both));
    let wants_naive = matches!(args.boot, Some(BootChoice::Naive | BootChoice::Both));
    if wants_proposed && args.id.is_none() {
        return Err(CliError::input(
            "the proposed bootstrap needs --id to identify duplicated participants",
        ));
    }

    let parsed = read_stacked_csv(
        &args.data,
        &args.outcome,
        &args.covariates,
        args.id.as_deref(),
    )?;
    let fit = fit_logistic(&parsed.stacked, &FitOptions::default()).map_err(CliError::from_lib)?;
    if !fit.converged {
        return Err(CliError::compute(format!(
            "fit did not converge within {} iterations",
            fit.iterations
        )));
    }

    let mut methods = Vec::new();
    let mut add_method = |method: &'static str, ses: nalgebra::DVector<f64>| -> Result<(), CliError> {
        let ci = (0..ses.len())
            .map(|j| wald_ci(fit.beta[j], ses[j], args.level).map_err(CliError::from_lib))
            .collect::<Result<Vec<_>, _>>()?;
        methods.push(MethodColumn {
            method,
            se: ses.iter().copied().collect(),
            ci,
        });
        Ok(())
    };
    add_method(
        "model",
        model_covariance(&fit)
            .map_err(CliError::from_lib)?
            .standard_errors(),
    )?;
    add_method(
        "robust",
        robust_covariance(&fit, &parsed.stacked)
            .map_err(CliError::from_lib)?
            .standard_errors(),
    )?;

    let seeds = SeedTree::from_master(args.seed);
    let run_boot = |strategy, child| -> Result<nalgebra::DVector<f64>, CliError> {
        let opts = BootstrapOptions::new(args.b, strategy);
        let result = bootstrap_variance(&parsed.sample, &parsed.cohort, &opts, &seeds.child(child))
            .map_err(CliError::from_lib)?;
        Ok(result.covariance.standard_errors())
    };
    if wants_naive {
        let ses = run_boot(BootstrapStrategy::Naive, 0)?;
        add_method("boot_naive", ses)?;
    }
    if wants_proposed {
        let ses = run_boot(BootstrapStrategy::Proposed, 1)?;
        add_method("boot_proposed", ses)?;
    }

    let mut term_names = vec!["(intercept)".to_string()];
    term_names.extend(args.covariates.iter().cloned());
    let report = FitReport {
        term_names,
        estimates: fit.beta.iter().copied().collect(),
        methods,
        level: args.level,
        duplicates: parsed.duplicates,
        n_rows: parsed.stacked.n_rows(),
        n_cases: parsed.sample.n_cases(),
        n_subcohort: parsed.sample.n_subcohort(),
        iterations: fit.iterations,
    };
    print!("{}", render::render_fit_text(&report));
    if let Some(out) = &args.out {
        std::fs::write(out, render::write_fit_csv(&report))
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

/// Prints a counter to stderr, coarsened so long runs stay quiet.
struct StderrProgress {
    every: usize,
    count: AtomicUsize,
}

impl StderrProgress {
    fn new(total: usize) -> Self {
        StderrProgress {
            every: (total / 20).max(1),
            count: AtomicUsize::new(0),
        }
    }
}

impl ProgressSink for StderrProgress {
    fn simulation_completed(&self, completed: usize, total: usize) {
        let n = self.count.fetch_add(1, Ordering::Relaxed) + 1;
        if n.is_multiple_of(self.every) || completed == total {
            eprintln!("  {completed}/{total} simulations");
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut study = StudyConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        study.seed = seed;
    }
    if let Some(b) = args.b {
        if b < 2 {
            return Err(CliError::input(format!(
                "--b must be at least 2, got {b}"
            )));
        }
        study.b = b;
    }
    let scenario = study.into_scenario()?;
    let progress = StderrProgress::new(scenario.n_sims);
    let report = run_scenario(&scenario, &progress).map_err(CliError::from_lib)?;
    print!("{}", render::render_study_text(&report));
    std::fs::write(&args.out, render::write_study_csv(&report))
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", args.out.display())))?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let study = StudyConfig::from_file(&args.config)?;
    let target = args.target_rate.unwrap_or(study.target_rate);
    if !(target > 0.0 && target < 1.0) {
        return Err(CliError::input(format!(
            "--target-rate must be in (0, 1), got {target}"
        )));
    }
    let mut params = study.sim_params.clone();
    let beta0 = calibrate_intercept(&params, target).map_err(CliError::from_lib)?;
    params.beta[0] = beta0;
    let achieved = marginal_event_rate(&params).map_err(CliError::from_lib)?;
    let n0 = (study.fraction * study.n as f64).round();
    println!("calibrated intercept (beta0): {beta0:.12}");
    println!("achieved marginal event rate: {achieved:.12}");
    println!("x1 prevalence: {:.6}", x1_prevalence(&params));
    println!(
        "implied mean duplicated samples at N = {}, fraction {} (n0 = {}): {:.2}",
        study.n,
        study.fraction,
        n0,
        n0 * achieved
    );
    Ok(())
}
