//! Error type shared across the crate.

use thiserror::Error;

/// Identifier of a cohort participant.
pub type ParticipantId = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A vector or matrix argument has the wrong dimension for the data.
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A caller-supplied argument violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The coefficient vector diverged during fitting, the usual signature of
    /// perfect separation in the data. Bootstrap replicates hit this
    /// routinely and are expected to redraw rather than treat it as a bug.
    #[error(
        "perfect separation suspected: |beta| reached {max_abs_beta:.3} after {iterations} iterations"
    )]
    Separation {
        max_abs_beta: f64,
        iterations: usize,
    },

    /// The weighted information matrix X'WX is singular (collinear
    /// covariates, or weights collapsed to zero).
    #[error("singular weighted information matrix")]
    SingularInformation,

    /// An operation used on a fit that did not converge.
    #[error("fit did not converge; refusing to compute covariance from it")]
    NotConverged,

    /// A sample refers to a participant id that is not in the cohort.
    #[error("unknown participant id {0}")]
    UnknownId(ParticipantId),

    /// Simulation parameters produce an event probability outside [0, 1]
    /// (the log link is not variance-guarded).
    #[error("invalid generating model: {0}")]
    InvalidModel(String),

    /// Intercept calibration has no valid root for the requested target.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// The bootstrap redraw budget was exhausted before collecting the
    /// requested number of converged replicates.
    #[error(
        "bootstrap failed: replicate {replicate} did not produce a converged fit \
         in {attempts} attempts (last failure: {last_failure})"
    )]
    BootstrapExhausted {
        replicate: usize,
        attempts: usize,
        last_failure: String,
    },

    /// More than the tolerated fraction of simulations failed in a scenario.
    #[error(
        "scenario aborted: {failed} failures across {total} simulations (limit {limit}); \
         last failure: {last_failure}"
    )]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: usize,
        last_failure: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
