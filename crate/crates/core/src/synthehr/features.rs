use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    CodeRef, Cohort, EhrError, EventKind, Patient, Result, DAYS_PER_YEAR, MAX_CUTOFF_OFFSET, MIN_CUTOFF_OFFSET,
};
use crate::matrix::{FeatureMatrix, SparseRow};

/// Per-code derived feature types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Letter {
    /// Any event before the cutoff.
    E,
    /// Years from the first event to the cutoff.
    Fd,
    /// Years from the last event to the cutoff.
    Ld,
    /// Years between first and last event.
    P,
    /// Event count.
    F,
    /// Latest lab value.
    V,
    /// A valid lab value exists.
    Ve,
    /// Least-squares slope of lab value against day.
    S,
    /// The slope is defined.
    Se,
}

impl Letter {
    pub const GENERAL: [Letter; 5] = [Letter::E, Letter::Fd, Letter::Ld, Letter::P, Letter::F];
    pub const LAB: [Letter; 4] = [Letter::V, Letter::Ve, Letter::S, Letter::Se];

    pub fn as_str(self) -> &'static str {
        match self {
            Letter::E => "e",
            Letter::Fd => "fd",
            Letter::Ld => "ld",
            Letter::P => "p",
            Letter::F => "f",
            Letter::V => "v",
            Letter::Ve => "ve",
            Letter::S => "s",
            Letter::Se => "se",
        }
    }

    /// The existence flag that gates this feature.
    pub fn existence(self) -> Letter {
        match self {
            Letter::E | Letter::Fd | Letter::Ld | Letter::P | Letter::F => Letter::E,
            Letter::V | Letter::Ve => Letter::Ve,
            Letter::S | Letter::Se => Letter::Se,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Code { code: CodeRef, letter: Letter },
    Age,
    AgeExists,
    Sex,
    SexExists,
    EncounterFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub source: FeatureSource,
}

/// The ordered set of feature columns derived from a code vocabulary.
///
/// Each code contributes `e, fd, ld, p, f` (plus `v, ve, s, se` for labs),
/// followed by the global columns `age, age[e], sex, sex[e],
/// encounter_frequency`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    pub specs: Vec<FeatureSpec>,
    pub vocabulary: Vec<CodeRef>,
    pub start_year: i32,
    code_index: HashMap<CodeRef, usize>,
}

impl FeatureSpace {
    pub fn new(vocabulary: &[CodeRef], start_year: i32) -> Self {
        let mut specs = Vec::new();
        for &code in vocabulary {
            let lab: &[Letter] = if code.kind == EventKind::Lab { &Letter::LAB } else { &[] };
            for &letter in Letter::GENERAL.iter().chain(lab) {
                specs.push(FeatureSpec {
                    name: format!("{code}[{}]", letter.as_str()),
                    source: FeatureSource::Code { code, letter },
                });
            }
        }
        for (name, source) in [
            ("age", FeatureSource::Age),
            ("age[e]", FeatureSource::AgeExists),
            ("sex", FeatureSource::Sex),
            ("sex[e]", FeatureSource::SexExists),
            ("encounter_frequency", FeatureSource::EncounterFrequency),
        ] {
            specs.push(FeatureSpec {
                name: name.into(),
                source,
            });
        }
        let code_index = vocabulary.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        FeatureSpace {
            specs,
            vocabulary: vocabulary.to_vec(),
            start_year,
            code_index,
        }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    /// Columns derived from `code`.
    pub fn code_columns(&self, code: CodeRef) -> Vec<usize> {
        self.specs
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s.source, FeatureSource::Code { code: c, .. } if c == code))
            .map(|(i, _)| i)
            .collect()
    }

    /// The code a column is derived from, if any.
    pub fn column_code(&self, col: usize) -> Option<CodeRef> {
        match self.specs[col].source {
            FeatureSource::Code { code, .. } => Some(code),
            _ => None,
        }
    }

    /// The existence flag column paired with `col`, or `None` for
    /// `encounter_frequency`. Existence flags pair with themselves.
    pub fn existence_column(&self, col: usize) -> Option<usize> {
        let target = match self.specs[col].source {
            FeatureSource::Code { code, letter } => FeatureSource::Code {
                code,
                letter: letter.existence(),
            },
            FeatureSource::Age | FeatureSource::AgeExists => FeatureSource::AgeExists,
            FeatureSource::Sex | FeatureSource::SexExists => FeatureSource::SexExists,
            FeatureSource::EncounterFrequency => return None,
        };
        self.specs.iter().position(|s| s.source == target)
    }

    fn birth_day(&self, year: i32) -> i64 {
        (year - self.start_year) as i64 * DAYS_PER_YEAR + DAYS_PER_YEAR / 2
    }
}

#[derive(Default)]
struct CodeHistory {
    count: usize,
    first: i64,
    last: i64,
    values: Vec<(i64, f64)>,
}

/// Least-squares slope of value on day, if at least two points with
/// distinct days exist.
fn slope(points: &[(i64, f64)], cutoff: i64) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let md = points.iter().map(|&(d, _)| (d - cutoff) as f64).sum::<f64>() / n;
    let mv = points.iter().map(|&(_, v)| v).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(d, v) in points {
        let dx = (d - cutoff) as f64 - md;
        sxy += dx * (v - mv);
        sxx += dx * dx;
    }
    if sxx > 0.0 {
        Some(sxy / sxx)
    } else {
        None
    }
}

/// The feature row for `patient` at `cutoff`, using only events strictly
/// before the cutoff. Missing values are 0 with their existence flag 0.
pub fn derive_features(patient: &Patient, cutoff: i64, space: &FeatureSpace) -> SparseRow {
    let end = patient.events.partition_point(|e| e.day < cutoff);
    let past = &patient.events[..end];
    let mut hist: Vec<CodeHistory> = (0..space.vocabulary.len()).map(|_| CodeHistory::default()).collect();
    let mut distinct_days = 0usize;
    let mut prev_day = None;
    for e in past {
        if prev_day != Some(e.day) {
            distinct_days += 1;
            prev_day = Some(e.day);
        }
        let Some(&k) = space.code_index.get(&e.code) else {
            continue;
        };
        let h = &mut hist[k];
        if h.count == 0 {
            h.first = e.day;
        }
        h.count += 1;
        h.last = e.day;
        if let Some(v) = e.value.filter(|v| v.is_finite()) {
            h.values.push((e.day, v));
        }
    }
    let years = |days: i64| days as f64 / DAYS_PER_YEAR as f64;
    let slopes: Vec<Option<f64>> = hist.iter().map(|h| slope(&h.values, cutoff)).collect();

    let mut row = SparseRow::new();
    for (col, spec) in space.specs.iter().enumerate() {
        let v = match spec.source {
            FeatureSource::Code { code, letter } => {
                let k = space.code_index[&code];
                let h = &hist[k];
                if h.count == 0 {
                    0.0
                } else {
                    match letter {
                        Letter::E => 1.0,
                        Letter::Fd => years(cutoff - h.first),
                        Letter::Ld => years(cutoff - h.last),
                        Letter::P => years(h.last - h.first),
                        Letter::F => h.count as f64,
                        Letter::V => h.values.last().map_or(0.0, |&(_, v)| v),
                        Letter::Ve => {
                            if h.values.is_empty() {
                                0.0
                            } else {
                                1.0
                            }
                        }
                        Letter::S => slopes[k].unwrap_or(0.0),
                        Letter::Se => {
                            if slopes[k].is_some() {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    }
                }
            }
            FeatureSource::Age => years(cutoff - space.birth_day(patient.birth_year)),
            FeatureSource::AgeExists | FeatureSource::SexExists => 1.0,
            FeatureSource::Sex => patient.sex as f64,
            FeatureSource::EncounterFrequency => {
                if cutoff > 0 {
                    distinct_days as f64 / years(cutoff)
                } else {
                    0.0
                }
            }
        };
        if v != 0.0 {
            row.push((col, v));
        }
    }
    row
}

/// Draws cutoff dates: positives sit 6 to 18 months before diagnosis;
/// negatives reuse the positive cutoff distribution by pairing with a
/// random positive's diagnosis day.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffSampler {
    pub positive_diagnosis: Vec<i64>,
    pub window_days: i64,
}

impl CutoffSampler {
    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        let mut positive_diagnosis = Vec::new();
        for (i, &label) in cohort.labels.iter().enumerate() {
            if label {
                let d = cohort.diagnosis_day[i].ok_or(EhrError::MissingDiagnosis(cohort.patients[i].id))?;
                positive_diagnosis.push(d);
            }
        }
        if positive_diagnosis.is_empty() {
            return Err(EhrError::NoPositives);
        }
        Ok(CutoffSampler {
            positive_diagnosis,
            window_days: cohort.window_days,
        })
    }

    pub fn offset<R: Rng + ?Sized>(rng: &mut R) -> i64 {
        rng.random_range(MIN_CUTOFF_OFFSET..=MAX_CUTOFF_OFFSET)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        patient: &Patient,
        label: bool,
        diagnosis_day: Option<i64>,
        rng: &mut R,
    ) -> Result<i64> {
        if label {
            let d = diagnosis_day.ok_or(EhrError::MissingDiagnosis(patient.id))?;
            return Ok(d - Self::offset(rng));
        }
        let d = self.positive_diagnosis[rng.random_range(0..self.positive_diagnosis.len())];
        let cutoff = d - Self::offset(rng);
        let end = patient
            .death_day
            .map_or(self.window_days, |dd| dd.min(self.window_days));
        Ok(cutoff.clamp(1, end.max(1)))
    }

    /// One cutoff per patient, drawn in patient order.
    pub fn sample_all<R: Rng + ?Sized>(&self, cohort: &Cohort, rng: &mut R) -> Result<Vec<i64>> {
        (0..cohort.len())
            .map(|i| self.sample(&cohort.patients[i], cohort.labels[i], cohort.diagnosis_day[i], rng))
            .collect()
    }
}

pub fn sample_cutoff<R: Rng + ?Sized>(
    patient: &Patient,
    label: bool,
    diagnosis_day: Option<i64>,
    sampler: &CutoffSampler,
    rng: &mut R,
) -> Result<i64> {
    sampler.sample(patient, label, diagnosis_day, rng)
}

/// One feature row per patient at the given cutoffs.
pub fn build_matrix(cohort: &Cohort, cutoffs: &[i64], space: &FeatureSpace) -> Result<FeatureMatrix> {
    if cutoffs.len() != cohort.len() {
        return Err(EhrError::Mismatch {
            what: "cutoffs",
            expected: cohort.len(),
            got: cutoffs.len(),
        });
    }
    if space.start_year != cohort.start_year {
        return Err(EhrError::Config(
            "feature space and cohort disagree on the start year".into(),
        ));
    }
    let rows: Vec<SparseRow> = cohort
        .patients
        .par_iter()
        .zip(cutoffs.par_iter())
        .map(|(p, &c)| derive_features(p, c, space))
        .collect();
    Ok(FeatureMatrix::from_rows(space.len(), &rows)?)
}

#[cfg(test)]
mod tests {
    use super::super::Event;
    use super::*;

    fn lab(day: i64, code: u32, v: f64) -> Event {
        Event {
            day,
            code: CodeRef::new(EventKind::Lab, code),
            value: Some(v),
        }
    }

    fn diag(day: i64, code: u32) -> Event {
        Event {
            day,
            code: CodeRef::new(EventKind::Diag, code),
            value: None,
        }
    }

    fn space() -> FeatureSpace {
        FeatureSpace::new(
            &[CodeRef::new(EventKind::Diag, 0), CodeRef::new(EventKind::Lab, 0)],
            2015,
        )
    }

    fn value(space: &FeatureSpace, row: &SparseRow, name: &str) -> f64 {
        let col = space.specs.iter().position(|s| s.name == name).unwrap();
        row.iter().find(|(c, _)| *c == col).map_or(0.0, |&(_, v)| v)
    }

    fn patient(events: Vec<Event>) -> Patient {
        Patient {
            id: 1,
            sex: 1,
            birth_year: 1960,
            death_day: None,
            events,
        }
    }

    #[test]
    fn column_layout() {
        let s = space();
        assert_eq!(s.len(), 5 + 9 + 5);
        assert_eq!(s.specs[0].name, "diag:0[e]");
        assert_eq!(s.specs[13].name, "lab:0[se]");
        assert_eq!(s.specs[14].name, "age");
        assert_eq!(s.existence_column(2), Some(0));
        assert_eq!(s.existence_column(12), Some(13));
        assert_eq!(s.existence_column(18), None);
        assert_eq!(
            s.code_columns(CodeRef::new(EventKind::Lab, 0)),
            (5..14).collect::<Vec<_>>()
        );
    }

    #[test]
    fn two_lab_values() {
        let s = space();
        let c = 1000;
        let p = patient(vec![lab(c - 100, 0, 1.0), lab(c - 50, 0, 2.0)]);
        let row = derive_features(&p, c, &s);
        assert_eq!(value(&s, &row, "lab:0[f]"), 2.0);
        assert_eq!(value(&s, &row, "lab:0[fd]"), 100.0 / 365.0);
        assert_eq!(value(&s, &row, "lab:0[ld]"), 50.0 / 365.0);
        assert_eq!(value(&s, &row, "lab:0[p]"), 50.0 / 365.0);
        assert_eq!(value(&s, &row, "lab:0[v]"), 2.0);
        assert_eq!(value(&s, &row, "lab:0[ve]"), 1.0);
        assert!((value(&s, &row, "lab:0[s]") - 0.02).abs() < 1e-15);
        assert_eq!(value(&s, &row, "lab:0[se]"), 1.0);
        assert_eq!(value(&s, &row, "diag:0[e]"), 0.0);
    }

    #[test]
    fn single_lab_value_has_no_slope() {
        let s = space();
        let row = derive_features(&patient(vec![lab(10, 0, 4.5)]), 30, &s);
        assert_eq!(value(&s, &row, "lab:0[ve]"), 1.0);
        assert_eq!(value(&s, &row, "lab:0[se]"), 0.0);
        assert_eq!(value(&s, &row, "lab:0[s]"), 0.0);
    }

    #[test]
    fn events_on_the_cutoff_day_are_excluded() {
        let s = space();
        let p = patient(vec![diag(100, 0), diag(200, 0)]);
        let row = derive_features(&p, 200, &s);
        assert_eq!(value(&s, &row, "diag:0[f]"), 1.0);
        assert_eq!(value(&s, &row, "diag:0[p]"), 0.0);
        assert_eq!(value(&s, &row, "encounter_frequency"), 1.0 / (200.0 / 365.0));
    }

    #[test]
    fn globals() {
        let s = space();
        let row = derive_features(&patient(vec![]), 365, &s);
        let birth = (1960 - 2015) * 365 + 182;
        assert_eq!(value(&s, &row, "age"), (365 - birth) as f64 / 365.0);
        assert_eq!(value(&s, &row, "sex"), 1.0);
        assert_eq!(value(&s, &row, "sex[e]"), 1.0);
        assert_eq!(value(&s, &row, "encounter_frequency"), 0.0);
        assert_eq!(row.len(), 4);
    }

    #[test]
    fn slope_matches_normal_equations() {
        let pts = [(3, 1.0), (10, 4.0), (11, 2.5), (40, -1.0), (41, 0.0)];
        let s = slope(&pts, 100).unwrap();
        // Solve [n Σx; Σx Σx²][a b]ᵀ = [Σy Σxy] by Cramer's rule.
        let n = pts.len() as f64;
        let (sx, sy, sxx, sxy) = pts.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, &(d, v)| {
            let x = d as f64;
            (acc.0 + x, acc.1 + v, acc.2 + x * x, acc.3 + x * v)
        });
        let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((s - b).abs() <= 1e-10);
        assert_eq!(slope(&[(5, 1.0), (5, 2.0)], 9), None);
    }
}
