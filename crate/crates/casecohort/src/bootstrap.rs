//! Bootstrap variance estimation for the stacked case-cohort fit.
//!
//! Two resampling schemes:
//!
//! * **proposed** — mirrors the case-cohort sampling mechanism. Draw n1
//!   cases with replacement, draw n0 - m from the non-case part of the
//!   subcohort with replacement, then pick m of the n1 case draws at
//!   random and add copies of them to the subcohort side, recreating the
//!   duplicated samples.
//! * **naive** — ordinary case-control bootstrap: n1 draws from the cases
//!   and n0 draws from the whole subcohort, ignoring duplication.
//!
//! Replicate k always consumes the stream at `seeds.child(k)`, so results
//! are identical at any thread count. Replicates whose fit separates or
//! fails to converge are redrawn from `seeds.child(k).child(attempt)`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::design::{CaseCohortSample, Cohort};
use crate::error::{Error, Result};
use crate::model::{
    fit_logistic, CovarianceEstimate, FitOptions, StackedDataset, VarianceMethod,
};
use crate::rng::SeedTree;
use rand::Rng;

/// Resampling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapStrategy {
    /// Duplication-aware scheme.
    Proposed,
    /// Case-control bootstrap that ignores duplication.
    Naive,
}

impl BootstrapStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            BootstrapStrategy::Proposed => "proposed",
            BootstrapStrategy::Naive => "naive",
        }
    }
}

/// How the m duplicated slots are picked from the n1 case draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicateSelection {
    /// Uniform without replacement: m distinct case draws are copied, and
    /// each copy shares its source row's id so the duplication is visible
    /// in the replicate.
    #[default]
    WithoutReplacement,
    /// Uniform with replacement. A case draw can then be copied more than
    /// once, so copies get fresh ids instead of shared ones.
    WithReplacement,
}

/// Options for [`bootstrap_variance`].
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    /// Number of replicates B.
    pub replicates: usize,
    pub strategy: BootstrapStrategy,
    pub fit: FitOptions,
    pub duplicate_selection: DuplicateSelection,
    /// Redraw budget per replicate; the total is therefore bounded by
    /// `replicates * max_attempts_per_replicate`.
    pub max_attempts_per_replicate: usize,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, strategy: BootstrapStrategy) -> Self {
        BootstrapOptions {
            replicates,
            strategy,
            fit: FitOptions::default(),
            duplicate_selection: DuplicateSelection::default(),
            max_attempts_per_replicate: 100,
        }
    }
}

/// Output of [`bootstrap_variance`].
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub strategy: BootstrapStrategy,
    /// Replicates actually aggregated (always equals the requested B).
    pub replicates: usize,
    /// B x (p+1) matrix of converged replicate coefficients.
    pub coefficient_draws: DMatrix<f64>,
    /// Empirical covariance of the draws, divisor B - 1.
    pub covariance: CovarianceEstimate,
    /// Replicate fits that had to be redrawn.
    pub failed_redraws: u64,
}

/// Covariate rows of the three resampling pools, resolved once so each
/// replicate is pure index arithmetic.
struct ResamplePools<'a> {
    dim: usize,
    case_x: Vec<&'a [f64]>,
    non_case_x: Vec<&'a [f64]>,
    subcohort_x: Vec<&'a [f64]>,
    duplicates: usize,
}

impl<'a> ResamplePools<'a> {
    fn new(sample: &CaseCohortSample, cohort: &'a Cohort) -> Result<Self> {
        let lookup = |id| {
            cohort
                .get(id)
                .map(|r| r.x.as_slice())
                .ok_or(Error::UnknownId(id))
        };
        let case_x = sample
            .case_ids()
            .iter()
            .map(|&id| lookup(id))
            .collect::<Result<Vec<_>>>()?;
        let subcohort_x = sample
            .subcohort_ids()
            .iter()
            .map(|&id| lookup(id))
            .collect::<Result<Vec<_>>>()?;
        let non_case_x = sample
            .non_case_subcohort_ids()
            .iter()
            .map(|&id| lookup(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResamplePools {
            dim: cohort.covariate_dim(),
            case_x,
            non_case_x,
            subcohort_x,
            duplicates: sample.duplicate_count(),
        })
    }

    fn draw_proposed(&self, rng: &mut impl Rng, selection: DuplicateSelection) -> StackedDataset {
        let n1 = self.case_x.len();
        let n_non_case = self.non_case_x.len();
        let m = self.duplicates;
        let n_rows = n1 + n_non_case + m;
        let mut outcomes = Vec::with_capacity(n_rows);
        let mut covariates = Vec::with_capacity(n_rows * self.dim);
        let mut ids = Vec::with_capacity(n_rows);

        // step 2: n1 case draws with replacement; slot index is the row id
        let case_draws: Vec<usize> = (0..n1).map(|_| rng.random_range(0..n1)).collect();
        for (slot, &src) in case_draws.iter().enumerate() {
            outcomes.push(true);
            covariates.extend_from_slice(self.case_x[src]);
            ids.push(slot as u64);
        }
        // step 3: n0 - m draws from the non-case subcohort members
        for j in 0..n_non_case {
            let src = rng.random_range(0..n_non_case);
            outcomes.push(false);
            covariates.extend_from_slice(self.non_case_x[src]);
            ids.push((n1 + j) as u64);
        }
        // step 4: copy m of the case draws onto the subcohort side
        match selection {
            DuplicateSelection::WithoutReplacement => {
                let mut slots: Vec<usize> = (0..n1).collect();
                for i in 0..m {
                    let j = rng.random_range(i..n1);
                    slots.swap(i, j);
                }
                slots.truncate(m);
                slots.sort_unstable();
                for &slot in &slots {
                    outcomes.push(false);
                    covariates.extend_from_slice(self.case_x[case_draws[slot]]);
                    ids.push(slot as u64); // pairs with the case row it copies
                }
            }
            DuplicateSelection::WithReplacement => {
                for t in 0..m {
                    let slot = rng.random_range(0..n1);
                    outcomes.push(false);
                    covariates.extend_from_slice(self.case_x[case_draws[slot]]);
                    ids.push((n1 + n_non_case + t) as u64);
                }
            }
        }
        StackedDataset::from_parts(self.dim, outcomes, covariates, ids)
    }

    fn draw_naive(&self, rng: &mut impl Rng) -> StackedDataset {
        let n1 = self.case_x.len();
        let n0 = self.subcohort_x.len();
        let n_rows = n1 + n0;
        let mut outcomes = Vec::with_capacity(n_rows);
        let mut covariates = Vec::with_capacity(n_rows * self.dim);
        let mut ids = Vec::with_capacity(n_rows);
        for slot in 0..n1 {
            let src = rng.random_range(0..n1);
            outcomes.push(true);
            covariates.extend_from_slice(self.case_x[src]);
            ids.push(slot as u64);
        }
        for j in 0..n0 {
            let src = rng.random_range(0..n0);
            outcomes.push(false);
            covariates.extend_from_slice(self.subcohort_x[src]);
            ids.push((n1 + j) as u64);
        }
        StackedDataset::from_parts(self.dim, outcomes, covariates, ids)
    }

    fn draw(
        &self,
        rng: &mut impl Rng,
        strategy: BootstrapStrategy,
        selection: DuplicateSelection,
    ) -> StackedDataset {
        match strategy {
            BootstrapStrategy::Proposed => self.draw_proposed(rng, selection),
            BootstrapStrategy::Naive => self.draw_naive(rng),
        }
    }
}

/// One duplication-aware replicate (Algorithm steps 2-4).
pub fn resample_proposed(
    sample: &CaseCohortSample,
    cohort: &Cohort,
    rng: &mut impl Rng,
) -> Result<StackedDataset> {
    resample_proposed_with(sample, cohort, rng, DuplicateSelection::WithoutReplacement)
}

/// [`resample_proposed`] with an explicit step-4 selection rule.
pub fn resample_proposed_with(
    sample: &CaseCohortSample,
    cohort: &Cohort,
    rng: &mut impl Rng,
    selection: DuplicateSelection,
) -> Result<StackedDataset> {
    if sample.duplicate_count() > sample.n_cases() {
        return Err(Error::InvalidArgument(
            "duplicate count exceeds the number of cases".into(),
        ));
    }
    let pools = ResamplePools::new(sample, cohort)?;
    Ok(pools.draw_proposed(rng, selection))
}

/// One naive replicate (step 3' in place of 3-4).
pub fn resample_naive(
    sample: &CaseCohortSample,
    cohort: &Cohort,
    rng: &mut impl Rng,
) -> Result<StackedDataset> {
    if sample.n_cases() == 0 || sample.n_subcohort() == 0 {
        return Err(Error::InvalidArgument(
            "naive resampling needs non-empty case and subcohort pools".into(),
        ));
    }
    let pools = ResamplePools::new(sample, cohort)?;
    Ok(pools.draw_naive(rng))
}

/// Run B replicates of resample-then-fit and aggregate the empirical
/// covariance of the coefficient draws.
///
/// Replicates that separate, hit a singular information matrix, or fail
/// to converge are redrawn with fresh sub-streams; the count is reported
/// in `failed_redraws`. Exhausting a replicate's budget is an error.
pub fn bootstrap_variance(
    sample: &CaseCohortSample,
    cohort: &Cohort,
    opts: &BootstrapOptions,
    seeds: &SeedTree,
) -> Result<BootstrapResult> {
    if opts.replicates < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    if opts.max_attempts_per_replicate == 0 {
        return Err(Error::InvalidArgument(
            "max_attempts_per_replicate must be at least 1".into(),
        ));
    }
    if sample.n_cases() == 0 || sample.n_subcohort() == 0 {
        return Err(Error::InvalidArgument(
            "bootstrap needs non-empty case and subcohort pools".into(),
        ));
    }
    let pools = ResamplePools::new(sample, cohort)?;
    let k = cohort.covariate_dim() + 1;

    let replicate_runs: Vec<Result<(Vec<f64>, u64)>> = (0..opts.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(rep, &pools, opts, seeds))
        .collect();

    let mut draws = DMatrix::zeros(opts.replicates, k);
    let mut failed_redraws = 0u64;
    for (rep, run) in replicate_runs.into_iter().enumerate() {
        let (beta, failures) = run?;
        failed_redraws += failures;
        for j in 0..k {
            draws[(rep, j)] = beta[j];
        }
    }

    let covariance = CovarianceEstimate {
        matrix: empirical_covariance(&draws),
        method: match opts.strategy {
            BootstrapStrategy::Proposed => VarianceMethod::BootProposed,
            BootstrapStrategy::Naive => VarianceMethod::BootNaive,
        },
    };
    Ok(BootstrapResult {
        strategy: opts.strategy,
        replicates: opts.replicates,
        coefficient_draws: draws,
        covariance,
        failed_redraws,
    })
}

fn run_replicate(
    rep: usize,
    pools: &ResamplePools<'_>,
    opts: &BootstrapOptions,
    seeds: &SeedTree,
) -> Result<(Vec<f64>, u64)> {
    let node = seeds.child(rep as u64);
    let mut failures = 0u64;
    let mut last_failure = String::new();
    for attempt in 0..opts.max_attempts_per_replicate {
        let mut rng = node.child(attempt as u64).rng();
        let data = pools.draw(&mut rng, opts.strategy, opts.duplicate_selection);
        match fit_logistic(&data, &opts.fit) {
            Ok(fit) if fit.converged && fit.beta.iter().all(|b| b.is_finite()) => {
                return Ok((fit.beta.iter().copied().collect(), failures));
            }
            Ok(_) => {
                failures += 1;
                last_failure = "did not converge".into();
            }
            Err(e @ (Error::Separation { .. } | Error::SingularInformation)) => {
                failures += 1;
                last_failure = e.to_string();
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::BootstrapExhausted {
        replicate: rep,
        attempts: opts.max_attempts_per_replicate,
        last_failure,
    })
}

/// Sample covariance of the rows of `draws`, divisor B - 1.
pub fn empirical_covariance(draws: &DMatrix<f64>) -> DMatrix<f64> {
    let b = draws.nrows();
    let k = draws.ncols();
    assert!(b >= 2, "need at least two draws for a covariance");
    let mut mean = vec![0.0; k];
    for i in 0..b {
        for j in 0..k {
            mean[j] += draws[(i, j)];
        }
    }
    for mj in mean.iter_mut() {
        *mj /= b as f64;
    }
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..b {
        for a in 0..k {
            let da = draws[(i, a)] - mean[a];
            for c in 0..=a {
                cov[(a, c)] += da * (draws[(i, c)] - mean[c]);
            }
        }
    }
    for a in 0..k {
        for c in 0..=a {
            cov[(a, c)] /= (b - 1) as f64;
            cov[(c, a)] = cov[(a, c)];
        }
    }
    cov
}
