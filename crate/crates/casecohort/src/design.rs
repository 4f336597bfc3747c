//! Cohort representation, case-cohort sampling, and the stacked
//! pseudo-dataset.
//!
//! A case-cohort sample takes every case plus a simple random subcohort of
//! the whole cohort. Participants selected on both sides (the duplicated
//! samples, `m` of them) end up in the stack twice: once as a case row and
//! once as a subcohort row.

use std::collections::{HashMap, HashSet};

use rand::Rng;

use crate::error::{Error, ParticipantId, Result};
use crate::model::StackedDataset;

/// One cohort participant.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRecord {
    pub id: ParticipantId,
    /// Outcome.
    pub y: bool,
    /// Analysis covariates; the same length for everyone in a cohort.
    pub x: Vec<f64>,
    /// Auxiliary values kept by the simulator (latent covariates); empty
    /// for real data. Never enters the analysis model.
    pub z: Vec<f64>,
}

/// A cohort with an id index for O(1) lookup.
#[derive(Debug, Clone)]
pub struct Cohort {
    records: Vec<CohortRecord>,
    index: HashMap<ParticipantId, usize>,
    covariate_dim: usize,
}

impl Cohort {
    /// Build from records, checking id uniqueness and a consistent
    /// covariate dimension.
    pub fn new(records: Vec<CohortRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("cohort must not be empty".into()));
        }
        let covariate_dim = records[0].x.len();
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.x.len() != covariate_dim {
                return Err(Error::DimensionMismatch {
                    what: "cohort covariates",
                    expected: covariate_dim,
                    actual: rec.x.len(),
                });
            }
            if index.insert(rec.id, i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate participant id {}",
                    rec.id
                )));
            }
        }
        Ok(Cohort {
            records,
            index,
            covariate_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn get(&self, id: ParticipantId) -> Option<&CohortRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[CohortRecord] {
        &self.records
    }

    pub fn n_cases(&self) -> usize {
        self.records.iter().filter(|r| r.y).count()
    }

    fn require(&self, id: ParticipantId) -> Result<&CohortRecord> {
        self.get(id).ok_or(Error::UnknownId(id))
    }
}

/// The selected subsample: all case ids plus a subcohort drawn from the
/// whole cohort. Ids are kept sorted, so stacking order is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseCohortSample {
    case_ids: Vec<ParticipantId>,
    subcohort_ids: Vec<ParticipantId>,
    duplicates: usize,
}

impl CaseCohortSample {
    /// Validates against the cohort: case ids must exist and have y = 1,
    /// subcohort ids must exist, and neither list may repeat an id.
    pub fn new(
        cohort: &Cohort,
        mut case_ids: Vec<ParticipantId>,
        mut subcohort_ids: Vec<ParticipantId>,
    ) -> Result<Self> {
        case_ids.sort_unstable();
        subcohort_ids.sort_unstable();
        if case_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("case ids contain repeats".into()));
        }
        if subcohort_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "subcohort ids contain repeats".into(),
            ));
        }
        for &id in &case_ids {
            if !cohort.require(id)?.y {
                return Err(Error::InvalidArgument(format!(
                    "case id {id} has outcome 0"
                )));
            }
        }
        for &id in &subcohort_ids {
            cohort.require(id)?;
        }
        let case_set: HashSet<ParticipantId> = case_ids.iter().copied().collect();
        let duplicates = subcohort_ids
            .iter()
            .filter(|id| case_set.contains(id))
            .count();
        Ok(CaseCohortSample {
            case_ids,
            subcohort_ids,
            duplicates,
        })
    }

    /// Case sample size n1.
    pub fn n_cases(&self) -> usize {
        self.case_ids.len()
    }

    /// Subcohort sample size n0.
    pub fn n_subcohort(&self) -> usize {
        self.subcohort_ids.len()
    }

    /// Number m of participants in both samples.
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    pub fn case_ids(&self) -> &[ParticipantId] {
        &self.case_ids
    }

    pub fn subcohort_ids(&self) -> &[ParticipantId] {
        &self.subcohort_ids
    }

    /// Subcohort ids that are not case ids, in sorted order. There are
    /// exactly n0 - m of them.
    pub fn non_case_subcohort_ids(&self) -> Vec<ParticipantId> {
        let case_set: HashSet<ParticipantId> = self.case_ids.iter().copied().collect();
        self.subcohort_ids
            .iter()
            .copied()
            .filter(|id| !case_set.contains(id))
            .collect()
    }
}

/// Draw a case-cohort sample: every case, plus a simple random sample of
/// round(subcohort_fraction * N) participants from the entire cohort,
/// without replacement.
pub fn sample_case_cohort(
    cohort: &Cohort,
    subcohort_fraction: f64,
    rng: &mut impl Rng,
) -> Result<CaseCohortSample> {
    if !(subcohort_fraction > 0.0 && subcohort_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subcohort fraction must be in (0, 1], got {subcohort_fraction}"
        )));
    }
    let n = cohort.len();
    let n0 = (subcohort_fraction * n as f64).round() as usize;

    let case_ids: Vec<ParticipantId> = cohort
        .records()
        .iter()
        .filter(|r| r.y)
        .map(|r| r.id)
        .collect();

    // partial Fisher-Yates: after i swaps the prefix is a uniform
    // without-replacement sample of size i
    let mut pool: Vec<ParticipantId> = cohort.records().iter().map(|r| r.id).collect();
    for i in 0..n0 {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(n0);

    CaseCohortSample::new(cohort, case_ids, pool)
}

/// Assemble the stacked pseudo-dataset: n1 case rows (indicator 1, sorted
/// by id) followed by n0 subcohort rows (indicator 0, sorted by id).
/// Duplicated participants contribute one row on each side.
pub fn build_stacked(cohort: &Cohort, sample: &CaseCohortSample) -> Result<StackedDataset> {
    let n_rows = sample.n_cases() + sample.n_subcohort();
    let dim = cohort.covariate_dim();
    let mut outcomes = Vec::with_capacity(n_rows);
    let mut covariates = Vec::with_capacity(n_rows * dim);
    let mut source_ids = Vec::with_capacity(n_rows);
    for &id in sample.case_ids() {
        let rec = cohort.require(id)?;
        outcomes.push(true);
        covariates.extend_from_slice(&rec.x);
        source_ids.push(id);
    }
    for &id in sample.subcohort_ids() {
        let rec = cohort.require(id)?;
        outcomes.push(false);
        covariates.extend_from_slice(&rec.x);
        source_ids.push(id);
    }
    Ok(StackedDataset::from_parts(
        dim, outcomes, covariates, source_ids,
    ))
}
