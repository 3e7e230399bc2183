//! Cohort files: JSON lines, one patient per line, with cohort-level
//! metadata in a `.meta.json` sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CodeRef, Cohort, EhrError, Event, EventKind, Patient, Result};

const COHORT_FORMAT: &str = "soundex.cohort";
const COHORT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EventRecord {
    Lab(i64, EventKind, u32, f64),
    Plain(i64, EventKind, u32),
}

#[derive(Serialize, Deserialize)]
struct PatientRecord {
    id: u64,
    sex: u8,
    birth_year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    death_day: Option<i64>,
    events: Vec<EventRecord>,
    label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnosis_day: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct CohortMeta {
    format: String,
    version: u32,
    ground_truth: Vec<CodeRef>,
    vocabulary: Vec<CodeRef>,
    window_days: i64,
    start_year: i32,
    rate_scale: f64,
}

pub fn meta_path(cohort: &Path) -> PathBuf {
    let mut s = cohort.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_cohort(path: &Path, cohort: &Cohort) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, p) in cohort.patients.iter().enumerate() {
        let record = PatientRecord {
            id: p.id,
            sex: p.sex,
            birth_year: p.birth_year,
            death_day: p.death_day,
            events: p
                .events
                .iter()
                .map(|e| match e.value {
                    Some(v) => EventRecord::Lab(e.day, e.code.kind, e.code.code, v),
                    None => EventRecord::Plain(e.day, e.code.kind, e.code.code),
                })
                .collect(),
            label: cohort.labels[i] as u8,
            diagnosis_day: cohort.diagnosis_day[i],
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let meta = CohortMeta {
        format: COHORT_FORMAT.into(),
        version: COHORT_VERSION,
        ground_truth: cohort.ground_truth.clone(),
        vocabulary: cohort.vocabulary.clone(),
        window_days: cohort.window_days,
        start_year: cohort.start_year,
        rate_scale: cohort.rate_scale,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(meta_path(path), text)?;
    Ok(())
}

pub fn read_cohort(path: &Path) -> Result<Cohort> {
    let meta: CohortMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
    if meta.format != COHORT_FORMAT || meta.version != COHORT_VERSION {
        return Err(EhrError::Parse {
            line: 0,
            message: format!("unsupported cohort metadata {} v{}", meta.format, meta.version),
        });
    }
    let mut patients = Vec::new();
    let mut labels = Vec::new();
    let mut diagnosis_day = Vec::new();
    for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| EhrError::Parse { line: k + 1, message };
        let r: PatientRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let mut events = Vec::with_capacity(r.events.len());
        for e in r.events {
            let event = match e {
                EventRecord::Lab(day, kind, code, v) if kind == EventKind::Lab => Event {
                    day,
                    code: CodeRef::new(kind, code),
                    value: Some(v),
                },
                EventRecord::Plain(day, kind, code) if kind != EventKind::Lab => Event {
                    day,
                    code: CodeRef::new(kind, code),
                    value: None,
                },
                _ => {
                    return Err(parse_err(
                        "lab events need a value and only lab events may have one".into(),
                    ))
                }
            };
            events.push(event);
        }
        if events.windows(2).any(|w| w[0].day > w[1].day) {
            return Err(parse_err("events are not sorted by day".into()));
        }
        if r.label > 1 {
            return Err(parse_err(format!("label must be 0 or 1, got {}", r.label)));
        }
        patients.push(Patient {
            id: r.id,
            sex: r.sex,
            birth_year: r.birth_year,
            death_day: r.death_day,
            events,
        });
        labels.push(r.label == 1);
        diagnosis_day.push(r.diagnosis_day);
    }
    Ok(Cohort {
        patients,
        labels,
        diagnosis_day,
        ground_truth: meta.ground_truth,
        vocabulary: meta.vocabulary,
        window_days: meta.window_days,
        start_year: meta.start_year,
        rate_scale: meta.rate_scale,
    })
}
