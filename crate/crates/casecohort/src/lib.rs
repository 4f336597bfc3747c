//! Risk-ratio estimation for case-cohort studies.
//!
//! A case-cohort study measures expensive covariates only on the cases
//! and on a random subcohort. Stacking both samples (participants in both
//! appear twice, once per side) and running ordinary logistic regression
//! on the side indicator estimates log risk ratios in the slopes. This
//! crate provides that fit plus three standard-error estimators:
//!
//! * the robust (sandwich) estimator, which treats every stacked row as
//!   independent and overestimates the true sampling variability because
//!   it ignores the duplicated rows;
//! * a naive case-control bootstrap, which resamples cases and subcohort
//!   independently and tracks the sandwich closely;
//! * a duplication-aware bootstrap that rebuilds the duplicated samples in
//!   every replicate and estimates the true variability without bias.
//!
//! The [`sim`] and [`study`] modules generate synthetic cohorts and run
//! the Monte Carlo experiment that quantifies those claims; `casecohort`
//! the binary exposes everything on the command line.
//!
//! ```
//! use casecohort::{
//!     build_stacked, fit_logistic, robust_covariance, sample_case_cohort, wald_ci,
//!     Cohort, CohortRecord, FitOptions, SeedTree,
//! };
//!
//! // a toy cohort: outcome y, one covariate
//! let cohort = Cohort::new(
//!     (0..40)
//!         .map(|id| CohortRecord {
//!             id,
//!             y: id % 5 == 0,
//!             x: vec![(id % 2) as f64],
//!             z: vec![],
//!         })
//!         .collect(),
//! )?;
//! let mut rng = SeedTree::from_master(7).rng();
//! let sample = sample_case_cohort(&cohort, 0.5, &mut rng)?;
//! let stacked = build_stacked(&cohort, &sample)?;
//! let fit = fit_logistic(&stacked, &FitOptions::default())?;
//! let se = robust_covariance(&fit, &stacked)?.standard_errors();
//! let (lo, hi) = wald_ci(fit.beta[1], se[1], 0.95)?;
//! assert!(lo < hi);
//! # Ok::<(), casecohort::Error>(())
//! ```

pub mod bootstrap;
pub mod design;
mod error;
pub mod model;
pub mod numerics;
mod rng;
pub mod sim;
pub mod study;

pub use bootstrap::{
    bootstrap_variance, empirical_covariance, resample_naive, resample_proposed,
    resample_proposed_with, BootstrapOptions, BootstrapResult, BootstrapStrategy,
    DuplicateSelection,
};
pub use design::{build_stacked, sample_case_cohort, CaseCohortSample, Cohort, CohortRecord};
pub use error::{Error, ParticipantId, Result};
pub use model::{
    fit_logistic, log_likelihood, model_covariance, robust_covariance, score, wald_ci,
    CovarianceEstimate, FitOptions, FitResult, StackedDataset, StackedRow, VarianceMethod,
};
pub use rng::SeedTree;
pub use sim::{
    calibrate_intercept, calibrate_x1_intercept, generate_cohort, marginal_event_rate,
    x1_prevalence, SimParams,
};
pub use study::{
    coverage, run_scenario, run_scenario_with_interval, CoefficientSummary, NoProgress,
    ProgressSink, ScenarioConfig, StudyReport, CONFIDENCE_LEVEL,
};

// Runs every code block of the guide as a doc-test, so the book in
// book/src cannot drift from the library.
#[cfg(doctest)]
mod book_guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/design.md")]
    mod design {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/bootstrap.md")]
    mod bootstrap {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
