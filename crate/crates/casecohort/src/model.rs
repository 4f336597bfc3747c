//! Pseudo-likelihood logistic regression on stacked case-cohort data.
//!
//! The stacked dataset holds one row per selected sample: cases carry the
//! indicator 1, subcohort members carry 0, and a participant selected on
//! both sides appears twice with opposite indicators. An ordinary logistic
//! regression of the indicator on the covariates estimates log risk ratios
//! in the slopes (the intercept is biased by construction).
//!
//! Variance estimators live here too: the inverse observed information
//! (`model_covariance`) and the row-independence sandwich
//! (`robust_covariance`). The sandwich deliberately treats every row as an
//! independent unit, duplicates included; quantifying the consequences of
//! that choice is the whole point of the bootstrap in [`crate::bootstrap`].

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, ParticipantId, Result};
use crate::numerics::{expit, standard_normal_quantile};

/// Coefficient magnitude beyond which a fit is reported as separated.
pub const SEPARATION_BETA_LIMIT: f64 = 30.0;

/// One row of a stacked dataset, used with [`StackedDataset::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct StackedRow {
    /// True for rows on the case side of the stack.
    pub case_indicator: bool,
    /// Covariate values; every row must have the same length (possibly 0
    /// for intercept-only data).
    pub covariates: Vec<f64>,
    /// Participant the row came from. An id may appear at most twice, and
    /// then exactly once per side.
    pub source_id: ParticipantId,
}

/// Stacked case/subcohort pseudo-data for logistic fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDataset {
    covariate_dim: usize,
    outcomes: Vec<bool>,
    covariates: Vec<f64>, // row-major, n_rows x covariate_dim
    source_ids: Vec<ParticipantId>,
}

impl StackedDataset {
    /// Validating constructor. Rejects ragged or non-finite covariates and
    /// any source id appearing twice on the same side or more than twice.
    pub fn new(rows: Vec<StackedRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "stacked dataset needs at least one row".into(),
            ));
        }
        let covariate_dim = rows[0].covariates.len();
        let mut outcomes = Vec::with_capacity(rows.len());
        let mut covariates = Vec::with_capacity(rows.len() * covariate_dim);
        let mut source_ids = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.covariates.len() != covariate_dim {
                return Err(Error::DimensionMismatch {
                    what: "stacked row covariates",
                    expected: covariate_dim,
                    actual: row.covariates.len(),
                });
            }
            if row.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite covariate in row {i}"
                )));
            }
            outcomes.push(row.case_indicator);
            covariates.extend_from_slice(&row.covariates);
            source_ids.push(row.source_id);
        }
        let data = StackedDataset {
            covariate_dim,
            outcomes,
            covariates,
            source_ids,
        };
        data.check_duplication()?;
        Ok(data)
    }

    /// Internal constructor for callers that guarantee the invariants
    /// structurally (stacking a validated sample, bootstrap replicates).
    pub(crate) fn from_parts(
        covariate_dim: usize,
        outcomes: Vec<bool>,
        covariates: Vec<f64>,
        source_ids: Vec<ParticipantId>,
    ) -> Self {
        debug_assert_eq!(outcomes.len() * covariate_dim, covariates.len());
        debug_assert_eq!(outcomes.len(), source_ids.len());
        let data = StackedDataset {
            covariate_dim,
            outcomes,
            covariates,
            source_ids,
        };
        debug_assert!(data.check_duplication().is_ok());
        data
    }

    fn check_duplication(&self) -> Result<()> {
        enum Seen {
            Once(bool),
            Both,
        }
        let mut seen: HashMap<ParticipantId, Seen> = HashMap::with_capacity(self.n_rows());
        for i in 0..self.n_rows() {
            let id = self.source_ids[i];
            let d = self.outcomes[i];
            match seen.get(&id) {
                None => {
                    seen.insert(id, Seen::Once(d));
                }
                Some(Seen::Once(first)) if *first != d => {
                    seen.insert(id, Seen::Both);
                }
                Some(Seen::Once(_)) => {
                    return Err(Error::InvalidArgument(format!(
                        "source id {id} appears twice with the same indicator"
                    )));
                }
                Some(Seen::Both) => {
                    return Err(Error::InvalidArgument(format!(
                        "source id {id} appears more than twice"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of covariates per row (excluding the implicit intercept).
    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    /// Length of the coefficient vector: covariates plus intercept.
    pub fn n_params(&self) -> usize {
        self.covariate_dim + 1
    }

    pub fn outcome(&self, row: usize) -> bool {
        self.outcomes[row]
    }

    pub fn covariates_row(&self, row: usize) -> &[f64] {
        let start = row * self.covariate_dim;
        &self.covariates[start..start + self.covariate_dim]
    }

    pub fn source_id(&self, row: usize) -> ParticipantId {
        self.source_ids[row]
    }

    pub fn n_cases(&self) -> usize {
        self.outcomes.iter().filter(|&&d| d).count()
    }

    /// Number of source ids contributing two rows (the duplicated
    /// participants).
    pub fn duplicate_count(&self) -> usize {
        let mut counts: HashMap<ParticipantId, usize> = HashMap::with_capacity(self.n_rows());
        for &id in &self.source_ids {
            *counts.entry(id).or_insert(0) += 1;
        }
        counts.values().filter(|&&c| c == 2).count()
    }

    /// Iterate over rows as (indicator, covariates, source id).
    pub fn iter_rows(&self) -> impl Iterator<Item = (bool, &[f64], ParticipantId)> + '_ {
        (0..self.n_rows()).map(move |i| (self.outcomes[i], self.covariates_row(i), self.source_ids[i]))
    }
}

/// Options for [`fit_logistic`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the sup-norm of the score.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 50,
            tolerance: 1e-8,
        }
    }
}

/// A fitted logistic regression.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Coefficients, intercept first.
    pub beta: DVector<f64>,
    pub converged: bool,
    /// Newton updates taken.
    pub iterations: usize,
    /// Inverse observed information (X'WX)^-1 at `beta`.
    pub neg_inv_hessian: DMatrix<f64>,
}

/// Which estimator produced a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMethod {
    Model,
    Robust,
    BootNaive,
    BootProposed,
}

impl VarianceMethod {
    pub fn label(&self) -> &'static str {
        match self {
            VarianceMethod::Model => "model",
            VarianceMethod::Robust => "robust",
            VarianceMethod::BootNaive => "boot_naive",
            VarianceMethod::BootProposed => "boot_proposed",
        }
    }
}

/// Covariance matrix for the fitted coefficients.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub method: VarianceMethod,
}

impl CovarianceEstimate {
    /// Square roots of the diagonal.
    pub fn standard_errors(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.matrix.nrows(),
            (0..self.matrix.nrows()).map(|j| self.matrix[(j, j)].max(0.0).sqrt()),
        )
    }
}

/// Bernoulli log-likelihood sum_i [d_i eta_i - log(1 + exp(eta_i))] with
/// eta_i = beta_0 + beta' x_i, overflow-safe.
pub fn log_likelihood(beta: &[f64], data: &StackedDataset) -> Result<f64> {
    check_beta_len(beta, data)?;
    Ok(evaluate(beta, data).log_likelihood)
}

/// Score vector sum_i x~_i (d_i - p_i) with x~_i = (1, x_i).
pub fn score(beta: &[f64], data: &StackedDataset) -> Result<DVector<f64>> {
    check_beta_len(beta, data)?;
    Ok(DVector::from_vec(evaluate(beta, data).score))
}

fn check_beta_len(beta: &[f64], data: &StackedDataset) -> Result<()> {
    if beta.len() != data.n_params() {
        return Err(Error::DimensionMismatch {
            what: "coefficient vector",
            expected: data.n_params(),
            actual: beta.len(),
        });
    }
    Ok(())
}

struct Evaluated {
    log_likelihood: f64,
    score: Vec<f64>,
    /// X'WX, row-major k x k.
    information: Vec<f64>,
}

/// One pass over the data: log-likelihood, score, and weighted information
/// at the given coefficients.
fn evaluate(beta: &[f64], data: &StackedDataset) -> Evaluated {
    let k = beta.len();
    let pdim = k - 1;
    let mut ll = 0.0;
    let mut grad = vec![0.0; k];
    let mut info = vec![0.0; k * k];
    for i in 0..data.n_rows() {
        let x = data.covariates_row(i);
        let mut eta = beta[0];
        for j in 0..pdim {
            eta += beta[j + 1] * x[j];
        }
        let e = (-eta.abs()).exp();
        let denom = 1.0 + e;
        let p = if eta >= 0.0 { 1.0 / denom } else { e / denom };
        let d = if data.outcome(i) { 1.0 } else { 0.0 };
        ll += d * eta - (eta.max(0.0) + e.ln_1p());
        let r = d - p;
        let w = p * (1.0 - p);
        grad[0] += r;
        info[0] += w;
        for a in 0..pdim {
            let xa = x[a];
            grad[a + 1] += xa * r;
            let wxa = w * xa;
            info[(a + 1) * k] += wxa;
            for b in 0..=a {
                info[(a + 1) * k + (b + 1)] += wxa * x[b];
            }
        }
    }
    // mirror the lower triangle
    for a in 0..k {
        for b in a + 1..k {
            info[a * k + b] = info[b * k + a];
        }
    }
    Evaluated {
        log_likelihood: ll,
        score: grad,
        information: info,
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Fit by Newton iterations from beta = 0, halving the step whenever the
/// log-likelihood fails to increase. Non-convergence inside the iteration
/// budget is reported in the result, not as an error; a diverging
/// coefficient norm or a singular information matrix is an error.
pub fn fit_logistic(data: &StackedDataset, opts: &FitOptions) -> Result<FitResult> {
    if opts.max_iterations == 0 || !opts.tolerance.is_finite() || opts.tolerance <= 0.0 {
        return Err(Error::InvalidArgument(
            "fit options need max_iterations >= 1 and a finite tolerance > 0".into(),
        ));
    }
    let k = data.n_params();
    let n = data.n_rows();
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "{k} coefficients cannot be estimated from {n} rows"
        )));
    }
    let n_cases = data.n_cases();
    if n_cases == 0 || n_cases == n {
        return Err(Error::InvalidArgument(
            "need at least one row of each outcome class".into(),
        ));
    }

    let mut beta = vec![0.0; k];
    let mut cur = evaluate(&beta, data);
    let mut iterations = 0;
    loop {
        if sup_norm(&cur.score) < opts.tolerance {
            return finish(beta, true, iterations, &cur.information);
        }
        if iterations >= opts.max_iterations {
            return finish(beta, false, iterations, &cur.information);
        }
        let delta = solve_spd(&cur.information, &cur.score, k)?;
        // halve only on a genuine decrease: near the optimum the
        // improvement is below float resolution and must still be accepted
        let noise = 1e-12 * (1.0 + cur.log_likelihood.abs());
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&delta)
                .map(|(b, d)| b + step * d)
                .collect();
            let cand_eval = evaluate(&cand, data);
            if cand_eval.log_likelihood > cur.log_likelihood - noise {
                beta = cand;
                cur = cand_eval;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !advanced {
            // stalled below machine resolution without meeting the tolerance
            return finish(beta, false, iterations, &cur.information);
        }
        let max_abs = sup_norm(&beta);
        if max_abs > SEPARATION_BETA_LIMIT {
            return Err(Error::Separation {
                max_abs_beta: max_abs,
                iterations,
            });
        }
    }
}

fn finish(beta: Vec<f64>, converged: bool, iterations: usize, info: &[f64]) -> Result<FitResult> {
    let k = beta.len();
    let info_m = DMatrix::from_row_slice(k, k, info);
    let chol = Cholesky::new(info_m).ok_or(Error::SingularInformation)?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(FitResult {
        beta: DVector::from_vec(beta),
        converged,
        iterations,
        neg_inv_hessian: inv,
    })
}

fn solve_spd(info: &[f64], rhs: &[f64], k: usize) -> Result<Vec<f64>> {
    let a = DMatrix::from_row_slice(k, k, info);
    let chol = Cholesky::new(a).ok_or(Error::SingularInformation)?;
    let sol = chol.solve(&DVector::from_column_slice(rhs));
    Ok(sol.iter().copied().collect())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for a in 0..m.nrows() {
        for b in a + 1..m.ncols() {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Sandwich estimator A^-1 B A^-1 with A the observed information at the
/// fit and B the sum of per-row score outer products. Every row counts as
/// an independent unit; duplicated participants are NOT pooled, which is
/// exactly the estimator whose bias the bootstrap corrects.
pub fn robust_covariance(fit: &FitResult, data: &StackedDataset) -> Result<CovarianceEstimate> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    check_beta_len(fit.beta.as_slice(), data)?;
    let k = data.n_params();
    let mut meat = DMatrix::zeros(k, k);
    let mut srow = vec![0.0; k];
    for i in 0..data.n_rows() {
        let x = data.covariates_row(i);
        let mut eta = fit.beta[0];
        for (b, v) in fit.beta.iter().skip(1).zip(x) {
            eta += b * v;
        }
        let r = (if data.outcome(i) { 1.0 } else { 0.0 }) - expit(eta);
        srow[0] = r;
        for (s, v) in srow.iter_mut().skip(1).zip(x) {
            *s = v * r;
        }
        for a in 0..k {
            for b in 0..=a {
                meat[(a, b)] += srow[a] * srow[b];
            }
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let mut v = &fit.neg_inv_hessian * meat * &fit.neg_inv_hessian;
    symmetrize(&mut v);
    Ok(CovarianceEstimate {
        matrix: v,
        method: VarianceMethod::Robust,
    })
}

/// Inverse observed information of a converged fit.
pub fn model_covariance(fit: &FitResult) -> Result<CovarianceEstimate> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    Ok(CovarianceEstimate {
        matrix: fit.neg_inv_hessian.clone(),
        method: VarianceMethod::Model,
    })
}

/// Wald interval: estimate +/- z_{(1+level)/2} * se.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !se.is_finite() || se < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "standard error must be finite and >= 0, got {se}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let z = standard_normal_quantile(0.5 * (1.0 + level));
    Ok((estimate - z * se, estimate + z * se))
}
