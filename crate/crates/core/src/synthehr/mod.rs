//! Synthetic EHR cohorts with planted risk codes, the data-quality and code
//! filters, cutoff sampling and fixed-length feature derivation.
//!
//! Days are integer indices from the start of the observation window. A month
//! is 30 days and a year 365 days throughout.

mod features;
mod generate;
mod io;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{
    build_matrix, derive_features, sample_cutoff, CutoffSampler, FeatureSource, FeatureSpace, FeatureSpec, Letter,
};
pub use generate::{filter_codes, generate_cohort, quality_filter};
pub use io::{meta_path, read_cohort, write_cohort};

pub const DAYS_PER_YEAR: i64 = 365;
pub const DAYS_PER_MONTH: i64 = 30;
/// Events later than this many days after death disqualify a patient.
pub const DEATH_GRACE_DAYS: i64 = 2 * DAYS_PER_MONTH;
pub const MIN_CUTOFF_OFFSET: i64 = 6 * DAYS_PER_MONTH;
pub const MAX_CUTOFF_OFFSET: i64 = 18 * DAYS_PER_MONTH;

#[derive(Debug, Error)]
pub enum EhrError {
    #[error("invalid cohort configuration: {0}")]
    Config(String),
    #[error("cohort has no positive patients")]
    NoPositives,
    #[error("patient {0} is positive but has no diagnosis day")]
    MissingDiagnosis(u64),
    #[error("{what}: expected {expected}, got {got}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cohort file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EhrError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Diag,
    Med,
    Lab,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::Diag, EventKind::Med, EventKind::Lab];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Diag => "diag",
            EventKind::Med => "med",
            EventKind::Lab => "lab",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeRef {
    pub kind: EventKind,
    pub code: u32,
}

impl CodeRef {
    pub fn new(kind: EventKind, code: u32) -> Self {
        CodeRef { kind, code }
    }
}

impl fmt::Display for CodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.code)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub day: i64,
    pub code: CodeRef,
    /// Present exactly for lab events.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: u64,
    pub sex: u8,
    pub birth_year: i32,
    pub death_day: Option<i64>,
    /// Sorted by day.
    pub events: Vec<Event>,
}

impl Patient {
    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| {
            a.day
                .cmp(&b.day)
                .then(a.code.cmp(&b.code))
                .then(a.value.partial_cmp(&b.value).unwrap_or(std::cmp::Ordering::Equal))
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCode {
    pub kind: EventKind,
    pub code: u32,
    /// Extra relative event rate for positives before diagnosis.
    pub hazard: f64,
}

impl PlantedCode {
    pub fn code_ref(&self) -> CodeRef {
        CodeRef::new(self.kind, self.code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_diag: u32,
    pub n_med: u32,
    pub n_lab: u32,
    pub planted: Vec<PlantedCode>,
    /// Target fraction of zero entries in the derived feature matrix.
    pub target_sparsity: f64,
    /// Per-code background rates are drawn uniformly from this range and
    /// multiplied by a common scale calibrated to the sparsity target.
    pub rate_spread: (f64, f64),
    pub window_years: u32,
    pub start_year: i32,
    pub death_fraction: f64,
    /// Fraction of deceased patients given records after death.
    pub post_death_fraction: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let planted = [
            (EventKind::Diag, 0, 3.0),
            (EventKind::Diag, 1, 3.0),
            (EventKind::Diag, 2, 2.5),
            (EventKind::Diag, 3, 2.5),
            (EventKind::Diag, 4, 2.0),
            (EventKind::Med, 0, 3.0),
            (EventKind::Med, 1, 2.5),
            (EventKind::Med, 2, 2.0),
            (EventKind::Lab, 0, 3.0),
            (EventKind::Lab, 1, 2.5),
        ]
        .into_iter()
        .map(|(kind, code, hazard)| PlantedCode { kind, code, hazard })
        .collect();
        CohortConfig {
            n_positive: 1000,
            n_negative: 4000,
            n_diag: 20,
            n_med: 10,
            n_lab: 5,
            planted,
            target_sparsity: 0.94,
            rate_spread: (0.5, 1.5),
            window_years: 6,
            start_year: 2015,
            death_fraction: 0.05,
            post_death_fraction: 0.2,
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn window_days(&self) -> i64 {
        self.window_years as i64 * DAYS_PER_YEAR
    }

    pub fn vocabulary(&self) -> Vec<CodeRef> {
        let mut v = Vec::new();
        for (kind, n) in [
            (EventKind::Diag, self.n_diag),
            (EventKind::Med, self.n_med),
            (EventKind::Lab, self.n_lab),
        ] {
            v.extend((0..n).map(|c| CodeRef::new(kind, c)));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EhrError::Config(m.into()));
        if self.n_positive == 0 || self.n_negative == 0 {
            return bad("patient counts must be positive");
        }
        if !(self.target_sparsity > 0.0 && self.target_sparsity < 1.0) {
            return bad("target sparsity must lie in (0, 1)");
        }
        if self.planted.is_empty() {
            return bad("at least one planted code is required");
        }
        let vocab = self.vocabulary();
        for p in &self.planted {
            if !vocab.contains(&p.code_ref()) {
                return Err(EhrError::Config(format!(
                    "planted code {} is not in the vocabulary",
                    p.code_ref()
                )));
            }
            if !(p.hazard.is_finite() && p.hazard >= 0.0) {
                return bad("hazards must be finite and non-negative");
            }
        }
        let (lo, hi) = self.rate_spread;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("rate spread must satisfy 0 < low <= high");
        }
        // Diagnosis days need room for the longest cutoff offset plus a year.
        if self.window_days() < MAX_CUTOFF_OFFSET + 2 * DAYS_PER_YEAR {
            return bad("observation window is too short");
        }
        for f in [self.death_fraction, self.post_death_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<Patient>,
    pub labels: Vec<bool>,
    pub diagnosis_day: Vec<Option<i64>>,
    pub ground_truth: Vec<CodeRef>,
    pub vocabulary: Vec<CodeRef>,
    pub window_days: i64,
    pub start_year: i32,
    /// Background rate scale chosen by sparsity calibration.
    pub rate_scale: f64,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Day index of a birth in `year`, taken at mid-year.
    pub fn birth_day(&self, year: i32) -> i64 {
        (year - self.start_year) as i64 * DAYS_PER_YEAR + DAYS_PER_YEAR / 2
    }

    /// Sub-cohort with the given patient indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Cohort {
        Cohort {
            patients: idx.iter().map(|&i| self.patients[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            diagnosis_day: idx.iter().map(|&i| self.diagnosis_day[i]).collect(),
            ..self.without_patients()
        }
    }

    fn without_patients(&self) -> Cohort {
        Cohort {
            patients: Vec::new(),
            labels: Vec::new(),
            diagnosis_day: Vec::new(),
            ground_truth: self.ground_truth.clone(),
            vocabulary: self.vocabulary.clone(),
            window_days: self.window_days,
            start_year: self.start_year,
            rate_scale: self.rate_scale,
        }
    }

    /// Drops patients failing [`quality_filter`], keeping labels aligned.
    pub fn quality_filtered(&self) -> Cohort {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| generate::passes_quality(&self.patients[i]))
            .collect();
        self.subset(&keep)
    }
}
