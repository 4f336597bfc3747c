//! Monte Carlo study harness.
//!
//! One scenario = many simulated cohorts, each run through the full
//! pipeline (generate, sample, stack, fit, three variance estimators,
//! Wald intervals), aggregated into per-coefficient summaries: mean and
//! empirical sd of the estimates, mean of each standard-error estimator,
//! and empirical coverage of the nominal 95% intervals.
//!
//! Simulation s draws every stream from `root.child(s)`, so scenario
//! output is byte-identical at any thread count. A simulation whose
//! original fit fails (separation, non-convergence) is redrawn with fresh
//! cohort randomness; redraws are counted and the scenario aborts if more
//! than 1% of simulations fail.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::bootstrap::{bootstrap_variance, BootstrapOptions, BootstrapStrategy};
use crate::design::{build_stacked, sample_case_cohort, Cohort};
use crate::error::{Error, Result};
use crate::model::{fit_logistic, robust_covariance, wald_ci, FitOptions};
use crate::rng::SeedTree;
use crate::sim::{generate_cohort, SimParams};

/// Confidence level of the reported intervals.
pub const CONFIDENCE_LEVEL: f64 = 0.95;

/// A scenario aborts when failed simulations exceed this fraction.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// One cell of the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub cohort_size: usize,
    pub subcohort_fraction: f64,
    pub n_sims: usize,
    /// Bootstrap replicates B per simulation and strategy.
    pub bootstrap_replicates: usize,
    pub sim_params: SimParams,
    pub master_seed: u64,
    pub fit: FitOptions,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cohort_size == 0 {
            return Err(Error::InvalidArgument("cohort size must be positive".into()));
        }
        if !(self.subcohort_fraction > 0.0 && self.subcohort_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "subcohort fraction must be in (0, 1], got {}",
                self.subcohort_fraction
            )));
        }
        if (self.subcohort_fraction * self.cohort_size as f64).round() < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "subcohort would be empty: round({} * {}) = 0",
                self.subcohort_fraction, self.cohort_size
            )));
        }
        if self.n_sims == 0 {
            return Err(Error::InvalidArgument("n_sims must be at least 1".into()));
        }
        if self.bootstrap_replicates < 2 {
            return Err(Error::InvalidArgument(
                "bootstrap_replicates must be at least 2".into(),
            ));
        }
        self.sim_params.validate()
    }
}

/// Observer for long runs; implementations must tolerate concurrent calls.
pub trait ProgressSink: Sync {
    fn simulation_completed(&self, completed: usize, total: usize);
}

/// Sink that ignores everything.
pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn simulation_completed(&self, _completed: usize, _total: usize) {}
}

/// Interval constructor seam: (estimate, se, level) -> (lower, upper).
/// Production use is always [`wald_ci`]; tests inject degenerate intervals.
pub type IntervalFn = dyn Fn(f64, f64, f64) -> (f64, f64) + Sync;

/// Aggregates for one coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSummary {
    /// Position in the coefficient vector; 0 is the intercept.
    pub index: usize,
    /// Generating value the coverage is judged against. For the intercept
    /// this is the calibrated b0, kept for record keeping only: the
    /// stacked pseudo-model intercept is biased by design.
    pub true_value: f64,
    pub mean_estimate: f64,
    pub empirical_sd: f64,
    pub mean_se_robust: f64,
    pub mean_se_boot_naive: f64,
    pub mean_se_boot_proposed: f64,
    pub cp_robust: f64,
    pub cp_boot_naive: f64,
    pub cp_boot_proposed: f64,
}

/// Scenario-level aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub cohort_size: usize,
    pub subcohort_fraction: f64,
    pub n_sims: usize,
    pub bootstrap_replicates: usize,
    pub master_seed: u64,
    /// One entry per coefficient, intercept first.
    pub coefficients: Vec<CoefficientSummary>,
    /// Mean duplicated samples m across simulations.
    pub mean_duplicates: f64,
    /// Simulations that had to be redrawn.
    pub simulation_redraws: usize,
    /// Bootstrap replicates redrawn inside the naive runs.
    pub bootstrap_redraws_naive: u64,
    /// Bootstrap replicates redrawn inside the proposed runs.
    pub bootstrap_redraws_proposed: u64,
}

/// Fraction of intervals containing the truth.
pub fn coverage(hits: &[bool]) -> Result<f64> {
    if hits.is_empty() {
        return Err(Error::InvalidArgument(
            "coverage of an empty sequence is undefined".into(),
        ));
    }
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

struct SimRecord {
    beta: Vec<f64>,
    se_robust: Vec<f64>,
    se_naive: Vec<f64>,
    se_proposed: Vec<f64>,
    hit_robust: Vec<bool>,
    hit_naive: Vec<bool>,
    hit_proposed: Vec<bool>,
    duplicates: usize,
    redraws: usize,
    last_failure: String,
    boot_redraws_naive: u64,
    boot_redraws_proposed: u64,
}

enum SimFailure {
    /// Data-dependent failure; retry with fresh randomness.
    Retry(String),
    /// Structural problem that retrying cannot fix.
    Fatal(Error),
}

/// Run the scenario with Wald intervals.
pub fn run_scenario(config: &ScenarioConfig, progress: &dyn ProgressSink) -> Result<StudyReport> {
    run_scenario_with_interval(config, progress, &|est, se, level| {
        wald_ci(est, se, level).expect("validated inputs")
    })
}

/// [`run_scenario`] with an injectable interval constructor.
pub fn run_scenario_with_interval(
    config: &ScenarioConfig,
    progress: &dyn ProgressSink,
    interval: &IntervalFn,
) -> Result<StudyReport> {
    config.validate()?;
    let root = SeedTree::from_master(config.master_seed);
    let failure_limit = (MAX_FAILURE_FRACTION * config.n_sims as f64).floor() as usize;
    // one simulation exceeding the whole budget forces an abort anyway
    let max_attempts_per_sim = failure_limit + 2;
    let completed = AtomicUsize::new(0);

    let results: Vec<std::result::Result<SimRecord, SimFailure>> = (0..config.n_sims)
        .into_par_iter()
        .map(|s| {
            let sim_node = root.child(s as u64);
            let mut redraws = 0usize;
            let mut last_failure = String::new();
            let mut outcome = None;
            for attempt in 0..max_attempts_per_sim {
                match run_one_simulation(config, &sim_node.child(attempt as u64), interval) {
                    Ok(mut rec) => {
                        rec.redraws = redraws;
                        rec.last_failure = std::mem::take(&mut last_failure);
                        outcome = Some(Ok(rec));
                        break;
                    }
                    Err(SimFailure::Retry(reason)) => {
                        redraws += 1;
                        last_failure = reason;
                    }
                    Err(fatal) => {
                        outcome = Some(Err(fatal));
                        break;
                    }
                }
            }
            let done = completed.fetch_add(1, Ordering::Relaxed) + 1;
            progress.simulation_completed(done, config.n_sims);
            outcome.unwrap_or(Err(SimFailure::Retry(last_failure)))
        })
        .collect();

    // fold in simulation order
    let k = 4usize; // intercept + x1 + x2 + x3
    let mut records = Vec::with_capacity(config.n_sims);
    let mut total_redraws = 0usize;
    let mut last_failure = String::from("none");
    for res in results {
        match res {
            Ok(rec) => {
                total_redraws += rec.redraws;
                if !rec.last_failure.is_empty() {
                    last_failure = rec.last_failure.clone();
                }
                records.push(rec);
            }
            Err(SimFailure::Fatal(e)) => return Err(e),
            Err(SimFailure::Retry(reason)) => {
                total_redraws += max_attempts_per_sim;
                last_failure = reason;
            }
        }
    }
    if total_redraws > failure_limit {
        return Err(Error::TooManyFailures {
            failed: total_redraws,
            total: config.n_sims,
            limit: failure_limit,
            last_failure,
        });
    }

    let n = records.len() as f64;
    let mut coefficients = Vec::with_capacity(k);
    for j in 0..k {
        let estimates: Vec<f64> = records.iter().map(|r| r.beta[j]).collect();
        let mean_estimate = mean(&estimates);
        let empirical_sd = sample_sd(&estimates, mean_estimate);
        let summary = CoefficientSummary {
            index: j,
            true_value: config.sim_params.beta[j],
            mean_estimate,
            empirical_sd,
            mean_se_robust: mean_by(&records, |r| r.se_robust[j]),
            mean_se_boot_naive: mean_by(&records, |r| r.se_naive[j]),
            mean_se_boot_proposed: mean_by(&records, |r| r.se_proposed[j]),
            cp_robust: hit_rate(&records, |r| r.hit_robust[j]),
            cp_boot_naive: hit_rate(&records, |r| r.hit_naive[j]),
            cp_boot_proposed: hit_rate(&records, |r| r.hit_proposed[j]),
        };
        coefficients.push(summary);
    }

    Ok(StudyReport {
        cohort_size: config.cohort_size,
        subcohort_fraction: config.subcohort_fraction,
        n_sims: config.n_sims,
        bootstrap_replicates: config.bootstrap_replicates,
        master_seed: config.master_seed,
        coefficients,
        mean_duplicates: records.iter().map(|r| r.duplicates as f64).sum::<f64>() / n,
        simulation_redraws: total_redraws,
        bootstrap_redraws_naive: records.iter().map(|r| r.boot_redraws_naive).sum(),
        bootstrap_redraws_proposed: records.iter().map(|r| r.boot_redraws_proposed).sum(),
    })
}

fn run_one_simulation(
    config: &ScenarioConfig,
    node: &SeedTree,
    interval: &IntervalFn,
) -> std::result::Result<SimRecord, SimFailure> {
    let fatal = SimFailure::Fatal;

    let records = generate_cohort(config.cohort_size, &config.sim_params, &node.child(0))
        .map_err(fatal)?;
    let cohort = Cohort::new(records).map_err(fatal)?;
    let sample = sample_case_cohort(&cohort, config.subcohort_fraction, &mut node.child(1).rng())
        .map_err(fatal)?;

    // data-dependent degeneracies: too few cases to stack and fit
    let k = cohort.covariate_dim() + 1;
    if sample.n_cases() == 0 || sample.n_cases() + sample.n_subcohort() < k {
        return Err(SimFailure::Retry("no cases in the simulated cohort".into()));
    }

    let stacked = build_stacked(&cohort, &sample).map_err(fatal)?;
    let fit = match fit_logistic(&stacked, &config.fit) {
        Ok(fit) if fit.converged => fit,
        Ok(_) => return Err(SimFailure::Retry("fit did not converge".into())),
        Err(e @ (Error::Separation { .. } | Error::SingularInformation)) => {
            return Err(SimFailure::Retry(e.to_string()))
        }
        Err(e) => return Err(SimFailure::Fatal(e)),
    };

    let robust = robust_covariance(&fit, &stacked).map_err(fatal)?;
    let boot = |strategy, child| {
        let mut opts = BootstrapOptions::new(config.bootstrap_replicates, strategy);
        opts.fit = config.fit.clone();
        bootstrap_variance(&sample, &cohort, &opts, &node.child(child))
    };
    let naive = match boot(BootstrapStrategy::Naive, 2) {
        Ok(b) => b,
        Err(e @ Error::BootstrapExhausted { .. }) => return Err(SimFailure::Retry(e.to_string())),
        Err(e) => return Err(SimFailure::Fatal(e)),
    };
    let proposed = match boot(BootstrapStrategy::Proposed, 3) {
        Ok(b) => b,
        Err(e @ Error::BootstrapExhausted { .. }) => return Err(SimFailure::Retry(e.to_string())),
        Err(e) => return Err(SimFailure::Fatal(e)),
    };

    let se_robust = robust.standard_errors();
    let se_naive = naive.covariance.standard_errors();
    let se_proposed = proposed.covariance.standard_errors();
    let hits = |ses: &nalgebra::DVector<f64>| -> Vec<bool> {
        (0..k)
            .map(|j| {
                let (lo, hi) = interval(fit.beta[j], ses[j], CONFIDENCE_LEVEL);
                let truth = config.sim_params.beta[j];
                lo <= truth && truth <= hi
            })
            .collect()
    };

    Ok(SimRecord {
        hit_robust: hits(&se_robust),
        hit_naive: hits(&se_naive),
        hit_proposed: hits(&se_proposed),
        beta: fit.beta.iter().copied().collect(),
        se_robust: se_robust.iter().copied().collect(),
        se_naive: se_naive.iter().copied().collect(),
        se_proposed: se_proposed.iter().copied().collect(),
        duplicates: sample.duplicate_count(),
        redraws: 0,
        last_failure: String::new(),
        boot_redraws_naive: naive.failed_redraws,
        boot_redraws_proposed: proposed.failed_redraws,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_by(records: &[SimRecord], f: impl Fn(&SimRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len() as f64
}

fn hit_rate(records: &[SimRecord], f: impl Fn(&SimRecord) -> bool) -> f64 {
    records.iter().filter(|r| f(r)).count() as f64 / records.len() as f64
}

fn sample_sd(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{calibrate_intercept, calibrate_x1_intercept};

    fn small_config() -> ScenarioConfig {
        let mut params = SimParams {
            beta: [0.0, 0.96, -0.28, -0.39],
            gamma: [0.0, 1.0, 0.5],
            z1_rate: 0.10,
            category2_rate: 0.16,
            category3_rate: 0.48,
        };
        params.gamma[0] = calibrate_x1_intercept(&params, 0.115).unwrap();
        params.beta[0] = calibrate_intercept(&params, 0.1535).unwrap();
        ScenarioConfig {
            cohort_size: 400,
            subcohort_fraction: 0.25,
            n_sims: 8,
            bootstrap_replicates: 20,
            sim_params: params,
            master_seed: 2024,
            fit: FitOptions::default(),
        }
    }

    #[test]
    fn smoke_single_simulation_produces_finite_report() {
        let mut config = small_config();
        config.n_sims = 1;
        config.bootstrap_replicates = 2;
        let report = run_scenario(&config, &NoProgress).unwrap();
        assert_eq!(report.coefficients.len(), 4);
        for c in &report.coefficients {
            assert!(c.mean_estimate.is_finite());
            assert!(c.empirical_sd >= 0.0);
            assert!(c.mean_se_robust.is_finite());
            assert!(c.mean_se_boot_naive.is_finite());
            assert!(c.mean_se_boot_proposed.is_finite());
            for cp in [c.cp_robust, c.cp_boot_naive, c.cp_boot_proposed] {
                assert!(cp == 0.0 || cp == 1.0);
            }
        }
        assert!(report.mean_duplicates >= 0.0);
    }

    #[test]
    fn full_line_interval_seam_gives_total_coverage() {
        let mut config = small_config();
        config.n_sims = 4;
        config.bootstrap_replicates = 4;
        let report = run_scenario_with_interval(&config, &NoProgress, &|_, _, _| {
            (f64::NEG_INFINITY, f64::INFINITY)
        })
        .unwrap();
        for c in &report.coefficients {
            assert_eq!(c.cp_robust, 1.0);
            assert_eq!(c.cp_boot_naive, 1.0);
            assert_eq!(c.cp_boot_proposed, 1.0);
        }
    }

    #[test]
    fn report_is_identical_across_thread_counts() {
        let config = small_config();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_scenario(&config, &NoProgress).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }

    #[test]
    fn progress_reaches_the_total() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Counting(AtomicUsize);
        impl ProgressSink for Counting {
            fn simulation_completed(&self, _done: usize, _total: usize) {
                self.0.fetch_add(1, Ordering::Relaxed);
            }
        }
        let sink = Counting(AtomicUsize::new(0));
        let mut config = small_config();
        config.n_sims = 5;
        config.bootstrap_replicates = 4;
        run_scenario(&config, &sink).unwrap();
        assert_eq!(sink.0.load(Ordering::Relaxed), 5);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = small_config();
        config.n_sims = 0;
        assert!(run_scenario(&config, &NoProgress).is_err());
        let mut config = small_config();
        config.bootstrap_replicates = 1;
        assert!(run_scenario(&config, &NoProgress).is_err());
        let mut config = small_config();
        config.subcohort_fraction = 1.5;
        assert!(run_scenario(&config, &NoProgress).is_err());
        // a fraction that rounds the subcohort down to nothing
        let mut config = small_config();
        config.cohort_size = 3;
        config.subcohort_fraction = 0.1;
        assert!(run_scenario(&config, &NoProgress).is_err());
    }

    #[test]
    fn scenario_aborts_when_failures_exceed_one_percent() {
        // cohorts of 8 at a ~15% event rate frequently have no cases or
        // too few stacked rows, so with a zero failure budget
        // (floor(0.01 * 40) = 0) the scenario must abort
        let mut config = small_config();
        config.cohort_size = 8;
        config.n_sims = 40;
        config.bootstrap_replicates = 2;
        match run_scenario(&config, &NoProgress) {
            Err(Error::TooManyFailures { failed, limit, .. }) => {
                assert!(failed > limit);
            }
            other => panic!("expected an abort, got {other:?}"),
        }
    }

    #[test]
    fn coverage_basics() {
        assert_eq!(coverage(&[true, true]).unwrap(), 1.0);
        assert_eq!(coverage(&[false, false]).unwrap(), 0.0);
        assert!(coverage(&[]).is_err());
        let mut hits = vec![true; 9490];
        hits.extend(vec![false; 510]);
        assert!((coverage(&hits).unwrap() - 0.949).abs() < 1e-12);
    }
}
