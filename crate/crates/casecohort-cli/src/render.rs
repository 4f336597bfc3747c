//! Report rendering: human tables on stdout, machine-readable CSV on
//! disk. Machine output formats reals with the shortest round-trip
//! representation, so re-parsing recovers the in-memory values exactly.

use std::fmt::Write as _;

use casecohort::StudyReport;

#[cfg(test)]
use crate::CliError;

/// Standard errors and intervals from one variance estimator.
pub struct MethodColumn {
    pub method: &'static str,
    pub se: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
}

/// Everything the `fit` command reports.
pub struct FitReport {
    pub term_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub methods: Vec<MethodColumn>,
    pub level: f64,
    pub duplicates: usize,
    pub n_rows: usize,
    pub n_cases: usize,
    pub n_subcohort: usize,
    pub iterations: usize,
}

pub fn render_fit_text(report: &FitReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "case-cohort fit: {} rows ({} cases + {} subcohort), {} covariates, m = {} duplicated",
        report.n_rows,
        report.n_cases,
        report.n_subcohort,
        report.term_names.len() - 1,
        report.duplicates
    );
    let _ = writeln!(out, "converged in {} iterations", report.iterations);
    let _ = writeln!(out);
    let pct = report.level * 100.0;
    let _ = writeln!(
        out,
        "{:<14} {:>12}  {:<14} {:>12} {:>12} {:>12}",
        "term", "estimate", "method", "se", format!("{pct}% lower"), format!("{pct}% upper")
    );
    for (j, term) in report.term_names.iter().enumerate() {
        for (i, col) in report.methods.iter().enumerate() {
            let (lo, hi) = col.ci[j];
            let _ = writeln!(
                out,
                "{:<14} {:>12}  {:<14} {:>12.6} {:>12.6} {:>12.6}",
                if i == 0 { term.as_str() } else { "" },
                if i == 0 {
                    format!("{:.6}", report.estimates[j])
                } else {
                    String::new()
                },
                col.method,
                col.se[j],
                lo,
                hi
            );
        }
    }
    out
}

pub fn write_fit_csv(report: &FitReport) -> String {
    let mut out = String::new();
    out.push_str("method,term,estimate,se,ci_lower,ci_upper,level,duplicates\n");
    for col in &report.methods {
        for (j, term) in report.term_names.iter().enumerate() {
            let (lo, hi) = col.ci[j];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                col.method,
                term,
                report.estimates[j],
                col.se[j],
                lo,
                hi,
                report.level,
                report.duplicates
            );
        }
    }
    out
}

/// Table-1 style block layout: one block of metric rows per coefficient.
pub fn render_study_text(report: &StudyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "case-cohort simulation study");
    let _ = writeln!(
        out,
        "N = {}, subcohort = {}%  (n_sims = {}, B = {}, seed = {})",
        report.cohort_size,
        report.subcohort_fraction * 100.0,
        report.n_sims,
        report.bootstrap_replicates,
        report.master_seed
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<26} {:>8.1}", "mean duplicated samples", report.mean_duplicates);
    // slopes first, the pseudo-model intercept last
    let order: Vec<usize> = (1..report.coefficients.len()).chain([0]).collect();
    for &idx in &order {
        let c = &report.coefficients[idx];
        let name = if c.index == 0 {
            "beta0 (intercept)".to_string()
        } else {
            format!("beta{}", c.index)
        };
        let _ = writeln!(out);
        let _ = writeln!(out, "{name} = {:.3}", c.true_value);
        let rows = [
            ("mean", c.mean_estimate),
            ("se (empirical sd)", c.empirical_sd),
            ("se robust (mean)", c.mean_se_robust),
            ("se boot naive (mean)", c.mean_se_boot_naive),
            ("se boot proposed (mean)", c.mean_se_boot_proposed),
            ("cp robust", c.cp_robust),
            ("cp boot naive", c.cp_boot_naive),
            ("cp boot proposed", c.cp_boot_proposed),
        ];
        for (label, value) in rows {
            let _ = writeln!(out, "  {label:<24} {value:>8.3}");
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "simulation redraws: {}; bootstrap redraws: naive {}, proposed {}",
        report.simulation_redraws, report.bootstrap_redraws_naive, report.bootstrap_redraws_proposed
    );
    out
}

/// One record per (coefficient, metric), plus scenario-level records with
/// an empty coefficient field.
pub fn write_study_csv(report: &StudyReport) -> String {
    let mut out = String::new();
    out.push_str("n,fraction,n_sims,b,seed,coefficient,metric,value\n");
    let mut push = |coefficient: &str, metric: &str, value: String| {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            report.cohort_size,
            report.subcohort_fraction,
            report.n_sims,
            report.bootstrap_replicates,
            report.master_seed,
            coefficient,
            metric,
            value
        );
    };
    for c in &report.coefficients {
        let name = format!("beta{}", c.index);
        let metrics: [(&str, f64); 9] = [
            ("true_value", c.true_value),
            ("mean_estimate", c.mean_estimate),
            ("empirical_sd", c.empirical_sd),
            ("mean_se_robust", c.mean_se_robust),
            ("mean_se_boot_naive", c.mean_se_boot_naive),
            ("mean_se_boot_proposed", c.mean_se_boot_proposed),
            ("cp_robust", c.cp_robust),
            ("cp_boot_naive", c.cp_boot_naive),
            ("cp_boot_proposed", c.cp_boot_proposed),
        ];
        for (metric, value) in metrics {
            push(&name, metric, value.to_string());
        }
    }
    push("", "mean_duplicates", report.mean_duplicates.to_string());
    push(
        "",
        "simulation_redraws",
        report.simulation_redraws.to_string(),
    );
    push(
        "",
        "bootstrap_redraws_naive",
        report.bootstrap_redraws_naive.to_string(),
    );
    push(
        "",
        "bootstrap_redraws_proposed",
        report.bootstrap_redraws_proposed.to_string(),
    );
    out
}
