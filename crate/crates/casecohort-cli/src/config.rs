//! Study configuration file: flat `key = value` pairs (TOML scalars).
//!
//! Required keys pin the scenario (`n`, `fraction`, `n_sims`, `b`,
//! `seed`); the generating model defaults to the reference design and any
//! key can be overridden:
//!
//! ```text
//! n = 2000          # cohort size
//! fraction = 0.2    # subcohort fraction of n
//! n_sims = 2000     # simulated cohorts
//! b = 500           # bootstrap replicates per estimator
//! seed = 1
//! beta1 = 0.96      # log risk ratios of x1..x3
//! beta2 = -0.28
//! beta3 = -0.39
//! gamma0 = -2.2705091351   # x1 model: logit(Pr(x1=1)) = gamma0 + gamma1 z1 + gamma2 z2
//! gamma1 = 1.0
//! gamma2 = 0.5
//! p_z1 = 0.10       # z1 ~ Bernoulli(p_z1)
//! q2 = 0.16         # trinomial probabilities for the x2/x3 dummies
//! q3 = 0.48
//! target_rate = 0.1535     # marginal event rate; beta0 is calibrated to it
//! ```
//!
//! Unknown keys are rejected. The outcome intercept `beta0` is never a
//! key: it is always calibrated so the marginal event rate matches
//! `target_rate`.

use std::path::Path;

use serde::Deserialize;

use casecohort::{calibrate_intercept, FitOptions, ScenarioConfig, SimParams};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n: Option<i64>,
    fraction: Option<f64>,
    n_sims: Option<i64>,
    b: Option<i64>,
    seed: Option<i64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    beta3: Option<f64>,
    gamma0: Option<f64>,
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    p_z1: Option<f64>,
    q2: Option<f64>,
    q3: Option<f64>,
    target_rate: Option<f64>,
}

/// Defaults for the generating model (the reference simulation design).
pub const DEFAULT_BETA: [f64; 3] = [0.96, -0.28, -0.39];
pub const DEFAULT_GAMMA: [f64; 3] = [-2.270_509_135_1, 1.0, 0.5];
pub const DEFAULT_P_Z1: f64 = 0.10;
pub const DEFAULT_Q2: f64 = 0.16;
pub const DEFAULT_Q3: f64 = 0.48;
pub const DEFAULT_TARGET_RATE: f64 = 0.1535;

/// A parsed and validated configuration, before intercept calibration.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub n: usize,
    pub fraction: f64,
    pub n_sims: usize,
    pub b: usize,
    pub seed: u64,
    pub sim_params: SimParams,
    pub target_rate: f64,
}

impl StudyConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let mut violations: Vec<String> = Vec::new();
        let mut require_count = |name: &str, value: Option<i64>, min: i64| -> usize {
            match value {
                None => {
                    violations.push(format!("missing required key '{name}'"));
                    min as usize
                }
                Some(v) if v < min => {
                    violations.push(format!("'{name}' must be at least {min}, got {v}"));
                    min as usize
                }
                Some(v) => v as usize,
            }
        };
        let n = require_count("n", raw.n, 1);
        let n_sims = require_count("n_sims", raw.n_sims, 1);
        let b = require_count("b", raw.b, 2);
        let seed = match raw.seed {
            None => {
                violations.push("missing required key 'seed'".into());
                0
            }
            Some(v) if v < 0 => {
                violations.push(format!("'seed' must be non-negative, got {v}"));
                0
            }
            Some(v) => v as u64,
        };
        let fraction = raw.fraction.unwrap_or_else(|| {
            violations.push("missing required key 'fraction'".into());
            0.2
        });
        if !(fraction > 0.0 && fraction <= 1.0) {
            violations.push(format!("'fraction' must be in (0, 1], got {fraction}"));
        }

        let mut rate = |name: &str, value: Option<f64>, default: f64| -> f64 {
            let v = value.unwrap_or(default);
            if !(0.0..=1.0).contains(&v) {
                violations.push(format!("'{name}' must be in [0, 1], got {v}"));
            }
            v
        };
        let p_z1 = rate("p_z1", raw.p_z1, DEFAULT_P_Z1);
        let q2 = rate("q2", raw.q2, DEFAULT_Q2);
        let q3 = rate("q3", raw.q3, DEFAULT_Q3);
        if q2 + q3 > 1.0 {
            violations.push(format!("'q2' + 'q3' must not exceed 1, got {}", q2 + q3));
        }
        let target_rate = raw.target_rate.unwrap_or(DEFAULT_TARGET_RATE);
        if !(target_rate > 0.0 && target_rate < 1.0) {
            violations.push(format!(
                "'target_rate' must be in (0, 1), got {target_rate}"
            ));
        }

        let sim_params = SimParams {
            // beta0 is calibrated later; slopes from keys
            beta: [
                0.0,
                raw.beta1.unwrap_or(DEFAULT_BETA[0]),
                raw.beta2.unwrap_or(DEFAULT_BETA[1]),
                raw.beta3.unwrap_or(DEFAULT_BETA[2]),
            ],
            gamma: [
                raw.gamma0.unwrap_or(DEFAULT_GAMMA[0]),
                raw.gamma1.unwrap_or(DEFAULT_GAMMA[1]),
                raw.gamma2.unwrap_or(DEFAULT_GAMMA[2]),
            ],
            z1_rate: p_z1,
            category2_rate: q2,
            category3_rate: q3,
        };

        if !violations.is_empty() {
            return Err(CliError::input(format!(
                "invalid configuration:\n  - {}",
                violations.join("\n  - ")
            )));
        }
        Ok(StudyConfig {
            n,
            fraction,
            n_sims,
            b,
            seed,
            sim_params,
            target_rate,
        })
    }

    /// Calibrate the outcome intercept and assemble the library config.
    pub fn into_scenario(mut self) -> Result<ScenarioConfig, CliError> {
        let beta0 = calibrate_intercept(&self.sim_params, self.target_rate)
            .map_err(CliError::compute)?;
        self.sim_params.beta[0] = beta0;
        Ok(ScenarioConfig {
            cohort_size: self.n,
            subcohort_fraction: self.fraction,
            n_sims: self.n_sims,
            bootstrap_replicates: self.b,
            sim_params: self.sim_params,
            master_seed: self.seed,
            fit: FitOptions::default(),
        })
    }
}
