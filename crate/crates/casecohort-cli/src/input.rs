//! Stacked CSV ingestion for the `fit` command.
//!
//! Expected shape: a header row; an outcome column holding 0 or 1; one
//! column per covariate parsed as decimal reals; optionally an id column
//! of opaque strings identifying participants, so that a participant
//! appearing on both sides of the stack (once with outcome 1, once with
//! 0) can be recognized as a duplicated sample.

use std::collections::HashMap;
use std::path::Path;

use casecohort::{
    CaseCohortSample, Cohort, CohortRecord, ParticipantId, StackedDataset, StackedRow,
};

use crate::CliError;

/// Parsed input: the stacked rows as given, plus the reconstructed
/// cohort/sample pair needed for bootstrap resampling.
pub struct FitInput {
    pub stacked: StackedDataset,
    pub cohort: Cohort,
    pub sample: CaseCohortSample,
    /// Count of participants appearing on both sides.
    pub duplicates: usize,
}

struct RawRow {
    line: u64,
    outcome: bool,
    covariates: Vec<f64>,
    key: Option<String>,
}

pub fn read_stacked_csv(
    path: &Path,
    outcome_col: &str,
    covariate_cols: &[String],
    id_col: Option<&str>,
) -> Result<FitInput, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("bad CSV header: {e}")))?
        .clone();
    let col_index = |name: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("column '{name}' not found in header")))
    };
    let outcome_idx = col_index(outcome_col)?;
    let covariate_idx: Vec<usize> = covariate_cols
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_, _>>()?;
    let id_idx = id_col.map(col_index).transpose()?;

    let mut rows: Vec<RawRow> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2; // header is line 1
        let record =
            record.map_err(|e| CliError::input(format!("malformed CSV at line {line}: {e}")))?;
        let field = |idx: usize| -> Result<&str, CliError> {
            record
                .get(idx)
                .ok_or_else(|| CliError::input(format!("line {line}: too few fields")))
        };
        let outcome = match field(outcome_idx)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::input(format!(
                    "line {line}: outcome column '{outcome_col}' must be 0 or 1, got '{other}'"
                )))
            }
        };
        let mut covariates = Vec::with_capacity(covariate_idx.len());
        for (&idx, name) in covariate_idx.iter().zip(covariate_cols) {
            let raw = field(idx)?;
            let value: f64 = raw.parse().map_err(|_| {
                CliError::input(format!(
                    "line {line}: covariate '{name}' is not a number: '{raw}'"
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::input(format!(
                    "line {line}: covariate '{name}' is not finite"
                )));
            }
            covariates.push(value);
        }
        let key = id_idx.map(|idx| field(idx).map(str::to_owned)).transpose()?;
        rows.push(RawRow {
            line,
            outcome,
            covariates,
            key,
        });
    }
    if rows.is_empty() {
        return Err(CliError::input("no data rows in the CSV"));
    }

    assemble(rows)
}

fn assemble(rows: Vec<RawRow>) -> Result<FitInput, CliError> {
    // participant ids: dense, by first appearance of the key (or one per
    // row when no id column is given)
    let mut key_to_id: HashMap<String, ParticipantId> = HashMap::new();
    let mut seen: Vec<Vec<(u64, bool)>> = Vec::new(); // per id: (line, outcome)
    let mut stacked_rows = Vec::with_capacity(rows.len());
    let mut records: Vec<CohortRecord> = Vec::new();

    for row in &rows {
        let fresh = |seen: &mut Vec<Vec<(u64, bool)>>, records: &mut Vec<CohortRecord>| {
            let id = seen.len() as ParticipantId;
            seen.push(Vec::new());
            records.push(CohortRecord {
                id,
                y: false,
                x: row.covariates.clone(),
                z: vec![],
            });
            id
        };
        let id = match &row.key {
            Some(key) => match key_to_id.get(key) {
                Some(&id) => id,
                None => {
                    let id = fresh(&mut seen, &mut records);
                    key_to_id.insert(key.clone(), id);
                    id
                }
            },
            None => fresh(&mut seen, &mut records),
        };
        let history = &mut seen[id as usize];
        let label = row.key.as_deref().unwrap_or("<row>");
        if history.len() >= 2 {
            let lines: Vec<u64> = history.iter().map(|(l, _)| *l).collect();
            return Err(CliError::input(format!(
                "line {}: participant '{label}' appears more than twice (earlier lines {lines:?})",
                row.line
            )));
        }
        if let Some(&(earlier_line, earlier_outcome)) = history.first() {
            if earlier_outcome == row.outcome {
                return Err(CliError::input(format!(
                    "line {}: participant '{label}' repeats outcome {} from line {earlier_line}; \
                     a duplicated participant must appear once as case and once as subcohort",
                    row.line, row.outcome as u8
                )));
            }
            if row.covariates != records[id as usize].x {
                return Err(CliError::input(format!(
                    "line {}: covariates differ from participant '{label}''s row at line {earlier_line}",
                    row.line
                )));
            }
        }
        history.push((row.line, row.outcome));
        if row.outcome {
            records[id as usize].y = true;
        }
        stacked_rows.push(StackedRow {
            case_indicator: row.outcome,
            covariates: row.covariates.clone(),
            source_id: id,
        });
    }

    let stacked = StackedDataset::new(stacked_rows).map_err(|e| {
        CliError::input(format!(
            "invalid stacked data (check duplicate ids and indicators): {e}"
        ))
    })?;

    let mut case_ids = Vec::new();
    let mut subcohort_ids = Vec::new();
    for i in 0..stacked.n_rows() {
        if stacked.outcome(i) {
            case_ids.push(stacked.source_id(i));
        } else {
            subcohort_ids.push(stacked.source_id(i));
        }
    }
    let cohort = Cohort::new(records).map_err(|e| CliError::input(e.to_string()))?;
    let sample = CaseCohortSample::new(&cohort, case_ids, subcohort_ids)
        .map_err(|e| CliError::input(e.to_string()))?;
    let duplicates = sample.duplicate_count();

    Ok(FitInput {
        stacked,
        cohort,
        sample,
        duplicates,
    })
}
