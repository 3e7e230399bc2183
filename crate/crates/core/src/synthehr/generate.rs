use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{
    build_matrix, CodeRef, Cohort, CohortConfig, CutoffSampler, EhrError, Event, EventKind, FeatureSpace, Patient,
    Result, DAYS_PER_YEAR, DEATH_GRACE_DAYS, MAX_CUTOFF_OFFSET,
};
use crate::seed;

const SCALE_LOW: f64 = 1e-4;
const SCALE_HIGH: f64 = 5.0;
const BISECTION_STEPS: usize = 40;
const MAX_POISSON_MEAN: f64 = 600.0;

/// Smallest `k` with `P(N ≤ k) ≥ u` for `N ~ Poisson(mean)`. For a fixed `u`
/// the count never decreases as the mean grows.
fn poisson_inverse(u: f64, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let mut k = 0;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

struct Skeleton {
    patient: Patient,
    label: bool,
    diagnosis_day: Option<i64>,
    post_death: bool,
}

struct CodeParams {
    code: CodeRef,
    rate: f64,
    hazard: f64,
    lab_mean: f64,
}

fn draw_skeletons(config: &CohortConfig) -> Vec<Skeleton> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "demographics"));
    let window = config.window_days();
    let mut labels: Vec<bool> = (0..config.n_positive + config.n_negative)
        .map(|i| i < config.n_positive)
        .collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(id, label)| {
            let sex = rng.random_range(0..=1u8);
            let birth_year = config.start_year - rng.random_range(40..=85);
            let (diagnosis_day, death_day, post_death) = if label {
                (
                    Some(rng.random_range(MAX_CUTOFF_OFFSET + DAYS_PER_YEAR..window)),
                    None,
                    false,
                )
            } else if rng.random_bool(config.death_fraction) {
                let death = rng.random_range(DAYS_PER_YEAR..window);
                (None, Some(death), rng.random_bool(config.post_death_fraction))
            } else {
                (None, None, false)
            };
            Skeleton {
                patient: Patient {
                    id: id as u64,
                    sex,
                    birth_year,
                    death_day,
                    events: Vec::new(),
                },
                label,
                diagnosis_day,
                post_death,
            }
        })
        .collect()
}

fn code_params(config: &CohortConfig) -> Vec<CodeParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "code-rates"));
    let (lo, hi) = config.rate_spread;
    config
        .vocabulary()
        .into_iter()
        .map(|code| {
            let rate = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let lab_mean = rng.random_range(2.0..8.0);
            let hazard = config
                .planted
                .iter()
                .find(|p| p.code_ref() == code)
                .map_or(0.0, |p| p.hazard);
            CodeParams {
                code,
                rate,
                hazard,
                lab_mean,
            }
        })
        .collect()
}

fn event(code: &CodeParams, day: i64, rng: &mut ChaCha8Rng) -> Event {
    let value = (code.code.kind == EventKind::Lab).then(|| {
        let z: f64 = rng.sample(StandardNormal);
        code.lab_mean + z
    });
    Event {
        day,
        code: code.code,
        value,
    }
}

/// Events of one patient at background rate scale `scale`. Every
/// (patient, code) pair has its own random stream and counts come from
/// inverse-CDF sampling, so raising the scale only ever adds events.
fn patient_events(
    config: &CohortConfig,
    index: usize,
    sk: &Skeleton,
    codes: &[CodeParams],
    scale: f64,
) -> Result<Vec<Event>> {
    let window = config.window_days();
    let end = sk.patient.death_day.map_or(window, |d| d.min(window));
    let mut events = Vec::new();
    for (c, code) in codes.iter().enumerate() {
        let stream = seed::derive_indexed(config.seed, "events", ((index as u64) << 20) | c as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let background = scale * code.rate * end as f64 / DAYS_PER_YEAR as f64;
        let planted = match sk.diagnosis_day {
            Some(d) if code.hazard > 0.0 => scale * code.rate * code.hazard * d as f64 / DAYS_PER_YEAR as f64,
            _ => 0.0,
        };
        if background.max(planted) > MAX_POISSON_MEAN {
            return Err(EhrError::Config(
                "event rates too high for the observation window".into(),
            ));
        }
        let n_background = poisson_inverse(rng.random(), background);
        let n_planted = poisson_inverse(rng.random(), planted);
        for _ in 0..n_background {
            let day = rng.random_range(0..end);
            events.push(event(code, day, &mut rng));
        }
        if let Some(d) = sk.diagnosis_day {
            for _ in 0..n_planted {
                let day = rng.random_range(0..d);
                events.push(event(code, day, &mut rng));
            }
        }
    }
    if sk.post_death {
        let death = sk.patient.death_day.expect("post-death records need a death day");
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(config.seed, "post-death", index as u64));
        for _ in 0..rng.random_range(1..=3) {
            let code = &codes[rng.random_range(0..codes.len())];
            let day = death + rng.random_range(DEATH_GRACE_DAYS + 1..=DAYS_PER_YEAR);
            events.push(event(code, day, &mut rng));
        }
    }
    Ok(events)
}

fn assemble(config: &CohortConfig, skeletons: &[Skeleton], codes: &[CodeParams], scale: f64) -> Result<Cohort> {
    let patients = skeletons
        .par_iter()
        .enumerate()
        .map(|(i, sk)| {
            let mut p = sk.patient.clone();
            p.events = patient_events(config, i, sk, codes, scale)?;
            p.sort_events();
            Ok(p)
        })
        .collect::<Result<Vec<Patient>>>()?;
    Ok(Cohort {
        patients,
        labels: skeletons.iter().map(|s| s.label).collect(),
        diagnosis_day: skeletons.iter().map(|s| s.diagnosis_day).collect(),
        ground_truth: config
            .planted
            .iter()
            .filter(|p| p.hazard > 0.0)
            .map(|p| p.code_ref())
            .collect(),
        vocabulary: config.vocabulary(),
        window_days: config.window_days(),
        start_year: config.start_year,
        rate_scale: scale,
    })
}

/// Generates a cohort whose derived feature matrix has the configured
/// fraction of zero entries.
///
/// The background rate scale is found by bisection: at each trial scale the
/// whole cohort is generated and its matrix (full vocabulary, one seeded
/// cutoff per patient) measured.
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let skeletons = draw_skeletons(config);
    let codes = code_params(config);
    let space = FeatureSpace::new(&config.vocabulary(), config.start_year);
    let probe = assemble(config, &skeletons, &codes, 0.0)?;
    let sampler = CutoffSampler::from_cohort(&probe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "calibration-cutoffs"));
    let cutoffs = sampler.sample_all(&probe, &mut rng)?;
    let sparsity = |scale: f64| -> Result<f64> {
        let cohort = assemble(config, &skeletons, &codes, scale)?;
        Ok(build_matrix(&cohort, &cutoffs, &space)?.zero_fraction())
    };

    let target = config.target_sparsity;
    let (mut lo, mut hi) = (SCALE_LOW.ln(), SCALE_HIGH.ln());
    let sparse_end = sparsity(SCALE_LOW)?;
    let dense_end = sparsity(SCALE_HIGH)?;
    if sparse_end < target || dense_end > target {
        return Err(EhrError::Config(format!(
            "sparsity {target} is not reachable; achievable range is [{dense_end:.3}, {sparse_end:.3}]"
        )));
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if sparsity(mid.exp())? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (s_lo, s_hi) = (sparsity(lo.exp())?, sparsity(hi.exp())?);
    let scale = if (s_lo - target).abs() <= (s_hi - target).abs() {
        lo.exp()
    } else {
        hi.exp()
    };
    assemble(config, &skeletons, &codes, scale)
}

pub(super) fn passes_quality(p: &Patient) -> bool {
    match p.death_day {
        Some(death) => p.events.iter().all(|e| e.day <= death + DEATH_GRACE_DAYS),
        None => true,
    }
}

/// Removes patients with any record more than two months after death.
pub fn quality_filter(patients: &[Patient]) -> Vec<Patient> {
    patients.iter().filter(|p| passes_quality(p)).cloned().collect()
}

/// Codes recorded for at least 1% of positive patients.
pub fn filter_codes(cohort: &Cohort) -> Result<Vec<CodeRef>> {
    let n_pos = cohort.n_positive();
    if n_pos == 0 {
        return Err(EhrError::NoPositives);
    }
    let mut counts = vec![0usize; cohort.vocabulary.len()];
    let index: std::collections::HashMap<CodeRef, usize> =
        cohort.vocabulary.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    for (p, _) in cohort.patients.iter().zip(&cohort.labels).filter(|(_, &l)| l) {
        let seen: HashSet<CodeRef> = p.events.iter().map(|e| e.code).collect();
        for c in seen {
            if let Some(&k) = index.get(&c) {
                counts[k] += 1;
            }
        }
    }
    Ok(cohort
        .vocabulary
        .iter()
        .zip(counts)
        .filter(|(_, n)| n * 100 >= n_pos)
        .map(|(&c, _)| c)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthehr::PlantedCode;

    fn small() -> CohortConfig {
        CohortConfig {
            n_positive: 150,
            n_negative: 350,
            seed: 7,
            ..CohortConfig::default()
        }
    }

    fn bare(death: Option<i64>, days: &[i64]) -> Patient {
        Patient {
            id: 0,
            sex: 0,
            birth_year: 1950,
            death_day: death,
            events: days
                .iter()
                .map(|&day| Event {
                    day,
                    code: CodeRef::new(EventKind::Diag, 0),
                    value: None,
                })
                .collect(),
        }
    }

    #[test]
    fn poisson_inverse_is_monotone_and_calibrated() {
        assert_eq!(poisson_inverse(0.3, 0.0), 0);
        let mean = 2.5;
        let draws: Vec<usize> = (0..10_000)
            .map(|k| poisson_inverse((k as f64 + 0.5) / 10_000.0, mean))
            .collect();
        let avg = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
        assert!((avg - mean).abs() < 0.01);
        for k in 0..100 {
            let u = k as f64 / 100.0;
            assert!(poisson_inverse(u, 1.0) <= poisson_inverse(u, 1.3));
        }
    }

    #[test]
    fn deterministic_and_on_target() {
        let a = generate_cohort(&small()).unwrap();
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_positive(), 150);
        for (i, p) in a.patients.iter().enumerate() {
            assert!(p.events.windows(2).all(|w| w[0].day <= w[1].day));
            assert!(p
                .events
                .iter()
                .all(|e| e.value.is_some() == (e.code.kind == EventKind::Lab)));
            if a.labels[i] {
                let d = a.diagnosis_day[i].unwrap();
                assert!(d >= MAX_CUTOFF_OFFSET && d < a.window_days);
            }
        }
        let space = FeatureSpace::new(&a.vocabulary, a.start_year);
        let sampler = CutoffSampler::from_cohort(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cutoffs = sampler.sample_all(&a, &mut rng).unwrap();
        let z = build_matrix(&a, &cutoffs, &space).unwrap().zero_fraction();
        assert!((z - 0.94).abs() <= 0.03, "{z}");
    }

    #[test]
    fn infeasible_sparsity() {
        let config = CohortConfig {
            target_sparsity: 0.999,
            ..small()
        };
        assert!(matches!(generate_cohort(&config), Err(EhrError::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.planted.push(PlantedCode {
            kind: EventKind::Lab,
            code: 99,
            hazard: 1.0,
        });
        assert!(c.validate().is_err());
        assert!(CohortConfig {
            planted: vec![],
            ..small()
        }
        .validate()
        .is_err());
        assert!(CohortConfig {
            n_positive: 0,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn death_filter() {
        assert!(!passes_quality(&bare(Some(100), &[10, 161])));
        assert!(passes_quality(&bare(Some(100), &[10, 150, 160])));
        assert!(passes_quality(&bare(None, &[10, 5000])));
        let kept = quality_filter(&[bare(Some(100), &[161]), bare(None, &[1])]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].death_day, None);
    }

    #[test]
    fn code_filter_boundary() {
        let mut cohort = generate_cohort(&small()).unwrap();
        let target = CodeRef::new(EventKind::Diag, 19);
        let other = CodeRef::new(EventKind::Diag, 18);
        for p in &mut cohort.patients {
            p.events.retain(|e| e.code != target && e.code != other);
        }
        // Exactly 1% of 100 positives: keep 100 positives, give one the code.
        let pos: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.labels[i]).take(100).collect();
        let neg: Vec<usize> = (0..cohort.len()).filter(|&i| !cohort.labels[i]).collect();
        let mut idx = pos.clone();
        idx.extend(&neg);
        let mut sub = cohort.subset(&idx);
        sub.patients[0].events.push(Event {
            day: 5,
            code: target,
            value: None,
        });
        for k in 100..sub.len() {
            sub.patients[k].events.push(Event {
                day: 5,
                code: other,
                value: None,
            });
        }
        let kept = filter_codes(&sub).unwrap();
        assert!(kept.contains(&target));
        assert!(!kept.contains(&other));
    }

    #[test]
    fn post_death_records_are_generated_and_filtered() {
        let cohort = generate_cohort(&small()).unwrap();
        let filtered = cohort.quality_filtered();
        assert!(filtered.len() < cohort.len());
        assert!(filtered.patients.iter().all(passes_quality));
        assert_eq!(filtered.labels.len(), filtered.len());
    }
}
