use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    path_attribute, AffineFn, Attribution, AttributionError, DifferentiableFn, NegatedFn, PathSpec, Result, SumFn,
    DEFAULT_STEPS,
};

/// Dead-dimension scores must be at most this large in magnitude.
pub const SPECIFICITY_TOLERANCE: f64 = 1e-8;
/// A claimed dead dimension is rejected if moving along it changes `F` by more.
pub const SPECIFICITY_FUZZ_TOLERANCE: f64 = 1e-9;
/// Two baselines count as equal-valued when `|F(x'1) - F(x'2)|` is at most this.
pub const BASELINE_VALUE_TOLERANCE: f64 = 1e-9;

const PROBE_RANGE: f64 = 2.0;
const FUZZ_DELTAS_PER_POINT: usize = 4;
const FUZZ_DELTA_RANGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Specificity,
    Additivity,
    Completeness,
    BaselineInvariance,
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axiom::Specificity => "specificity",
            Axiom::Additivity => "additivity",
            Axiom::Completeness => "completeness",
            Axiom::BaselineInvariance => "baseline invariance",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
}

/// The concrete instance on which an axiom failed. Feeding these fields back
/// into the matching `*_at` checker reproduces the violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    Specificity {
        input: Vec<f64>,
        baseline: Vec<f64>,
        dim: usize,
        score: f64,
    },
    Additivity {
        input: Vec<f64>,
        baseline: Vec<f64>,
        dim: usize,
        deviation: f64,
    },
    Completeness {
        input: Vec<f64>,
        baseline: Vec<f64>,
        attributed: f64,
        delta: f64,
    },
    /// Dimensions `i < j` (0-based) whose order flips between baselines.
    BaselineInvariance {
        input: Vec<f64>,
        baseline1: Vec<f64>,
        baseline2: Vec<f64>,
        i: usize,
        j: usize,
        attribution1: Vec<f64>,
        attribution2: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub axiom: Axiom,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// Largest deviation seen across all probes (the axiom-specific quantity
    /// compared with the tolerance).
    pub max_deviation: f64,
    /// Number of probe instances examined.
    pub probes: usize,
}

impl AxiomReport {
    fn holds(axiom: Axiom, max_deviation: f64, probes: usize) -> Self {
        AxiomReport {
            axiom,
            verdict: Verdict::Holds,
            witness: None,
            max_deviation,
            probes,
        }
    }

    fn violated(axiom: Axiom, witness: Witness, max_deviation: f64, probes: usize) -> Self {
        AxiomReport {
            axiom,
            verdict: Verdict::Violated,
            witness: Some(witness),
            max_deviation,
            probes,
        }
    }

    /// Merges per-probe reports, keeping the first violation as witness.
    fn combine(axiom: Axiom, reports: Vec<AxiomReport>) -> Self {
        let probes = reports.iter().map(|r| r.probes).sum();
        let max_deviation = reports.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
        match reports.into_iter().find(|r| r.verdict == Verdict::Violated) {
            Some(r) => AxiomReport::violated(axiom, r.witness.expect("violation has witness"), max_deviation, probes),
            None => AxiomReport::holds(axiom, max_deviation, probes),
        }
    }
}

fn check_dim(f: &dyn DifferentiableFn, v: &[f64]) -> Result<()> {
    if v.len() != f.dim() {
        return Err(AttributionError::DimensionMismatch {
            expected: f.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-PROBE_RANGE..PROBE_RANGE)).collect()
}

/// Straight-line specificity check at a single `(input, baseline)` pair.
pub fn specificity_at(
    f: &dyn DifferentiableFn,
    dead_dims: &[usize],
    input: &[f64],
    baseline: &[f64],
    steps: usize,
) -> Result<AxiomReport> {
    let a = path_attribute(f, &PathSpec::straight(baseline, input, steps))?;
    let mut worst: Option<(usize, f64)> = None;
    for &d in dead_dims {
        if d >= f.dim() {
            return Err(AttributionError::DimensionMismatch {
                expected: f.dim(),
                got: d + 1,
            });
        }
        let s = a.scores[d];
        if worst.is_none_or(|(_, w)| s.abs() > w.abs()) {
            worst = Some((d, s));
        }
    }
    let Some((dim, score)) = worst else {
        return Ok(AxiomReport::holds(Axiom::Specificity, 0.0, 1));
    };
    if score.abs() <= SPECIFICITY_TOLERANCE {
        Ok(AxiomReport::holds(Axiom::Specificity, score.abs(), 1))
    } else {
        Ok(AxiomReport::violated(
            Axiom::Specificity,
            Witness::Specificity {
                input: input.to_vec(),
                baseline: baseline.to_vec(),
                dim,
                score,
            },
            score.abs(),
            1,
        ))
    }
}

/// Specificity over `probes` random `(x, x')` pairs in `[-2, 2]^n`.
///
/// Each claimed dead dimension is fuzzed first: `F(p + δ·e_i)` must equal
/// `F(p)` within [`SPECIFICITY_FUZZ_TOLERANCE`] at both probe endpoints for
/// several random `δ`. A failed fuzz is a precondition error, not a verdict.
pub fn check_specificity(
    f: &dyn DifferentiableFn,
    dead_dims: &[usize],
    probes: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let n = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(probes);
    for _ in 0..probes {
        let x = random_point(&mut rng, n);
        let baseline = random_point(&mut rng, n);
        for &d in dead_dims {
            if d >= n {
                return Err(AttributionError::DimensionMismatch {
                    expected: n,
                    got: d + 1,
                });
            }
            for p in [&x, &baseline] {
                let base = f.value(p);
                let mut moved = p.clone();
                for _ in 0..FUZZ_DELTAS_PER_POINT {
                    let delta = rng.random_range(-FUZZ_DELTA_RANGE..FUZZ_DELTA_RANGE);
                    moved[d] = p[d] + delta;
                    let change = (f.value(&moved) - base).abs();
                    if !(change <= SPECIFICITY_FUZZ_TOLERANCE) {
                        return Err(AttributionError::Precondition {
                            axiom: Axiom::Specificity,
                            detail: format!(
                                "F changes by {change:e} when dimension {d} moves by {delta}; it is not dead"
                            ),
                        });
                    }
                }
            }
        }
        reports.push(specificity_at(f, dead_dims, &x, &baseline, DEFAULT_STEPS)?);
    }
    Ok(AxiomReport::combine(Axiom::Specificity, reports))
}

/// Additivity at a single path: `A(F1 + F2) = A(F1) + A(F2)` componentwise
/// within `tolerance`, with identical quadrature for all three.
pub fn additivity_at(
    f1: &dyn DifferentiableFn,
    f2: &dyn DifferentiableFn,
    path: &PathSpec,
    tolerance: f64,
) -> Result<AxiomReport> {
    if f1.dim() != f2.dim() {
        return Err(AttributionError::DimensionMismatch {
            expected: f1.dim(),
            got: f2.dim(),
        });
    }
    let sum = SumFn { left: f1, right: f2 };
    let a_sum = path_attribute(&sum, path)?;
    let a1 = path_attribute(f1, path)?;
    let a2 = path_attribute(f2, path)?;
    let (dim, deviation) = (0..f1.dim())
        .map(|i| (i, (a_sum.scores[i] - a1.scores[i] - a2.scores[i]).abs()))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if deviation <= tolerance {
        Ok(AxiomReport::holds(Axiom::Additivity, deviation, 1))
    } else {
        Ok(AxiomReport::violated(
            Axiom::Additivity,
            Witness::Additivity {
                input: path.input.clone(),
                baseline: path.baseline.clone(),
                dim,
                deviation,
            },
            deviation,
            1,
        ))
    }
}

/// Additivity over several `(x, x')` pairs sharing one step count.
pub fn check_additivity(
    f1: &dyn DifferentiableFn,
    f2: &dyn DifferentiableFn,
    pairs: &[(Vec<f64>, Vec<f64>)],
    steps: usize,
    tolerance: f64,
) -> Result<AxiomReport> {
    let reports = pairs
        .iter()
        .map(|(x, b)| additivity_at(f1, f2, &PathSpec::straight(b, x, steps), tolerance))
        .collect::<Result<Vec<_>>>()?;
    Ok(AxiomReport::combine(Axiom::Additivity, reports))
}

/// Completeness on the straight line: `|Σ a_i - (F(x) - F(x'))| <= tolerance`.
pub fn completeness_at(
    f: &dyn DifferentiableFn,
    input: &[f64],
    baseline: &[f64],
    steps: usize,
    tolerance: f64,
) -> Result<AxiomReport> {
    check_dim(f, input)?;
    check_dim(f, baseline)?;
    let a = path_attribute(f, &PathSpec::straight(baseline, input, steps))?;
    let attributed = a.total();
    let delta = f.value(input) - f.value(baseline);
    let deviation = (attributed - delta).abs();
    if deviation <= tolerance {
        Ok(AxiomReport::holds(Axiom::Completeness, deviation, 1))
    } else {
        Ok(AxiomReport::violated(
            Axiom::Completeness,
            Witness::Completeness {
                input: input.to_vec(),
                baseline: baseline.to_vec(),
                attributed,
                delta,
            },
            deviation,
            1,
        ))
    }
}

pub fn check_completeness(
    f: &dyn DifferentiableFn,
    pairs: &[(Vec<f64>, Vec<f64>)],
    steps: usize,
    tolerance: f64,
) -> Result<AxiomReport> {
    let reports = pairs
        .iter()
        .map(|(x, b)| completeness_at(f, x, b, steps, tolerance))
        .collect::<Result<Vec<_>>>()?;
    Ok(AxiomReport::combine(Axiom::Completeness, reports))
}

/// First pair `i < j` whose strict order differs between the two
/// attributions. Ties are never inversions.
fn rank_inversion(a1: &[f64], a2: &[f64]) -> Option<(usize, usize)> {
    let n = a1.len();
    for i in 0..n {
        for j in i + 1..n {
            let up1 = a1[i] < a1[j];
            let down1 = a1[i] > a1[j];
            let up2 = a2[i] < a2[j];
            let down2 = a2[i] > a2[j];
            if (up1 && down2) || (down1 && up2) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Baseline invariance for one input and two equal-valued baselines.
/// `max_deviation` counts inverted pairs.
pub fn baseline_invariance_at(
    f: &dyn DifferentiableFn,
    input: &[f64],
    baseline1: &[f64],
    baseline2: &[f64],
    steps: usize,
) -> Result<AxiomReport> {
    check_dim(f, input)?;
    check_dim(f, baseline1)?;
    check_dim(f, baseline2)?;
    let gap = (f.value(baseline1) - f.value(baseline2)).abs();
    if !(gap <= BASELINE_VALUE_TOLERANCE) {
        return Err(AttributionError::Precondition {
            axiom: Axiom::BaselineInvariance,
            detail: format!("baselines differ in value by {gap:e}"),
        });
    }
    let a1 = path_attribute(f, &PathSpec::straight(baseline1, input, steps))?;
    let a2 = path_attribute(f, &PathSpec::straight(baseline2, input, steps))?;
    let inverted = (0..a1.scores.len())
        .flat_map(|i| (i + 1..a1.scores.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| rank_inversion(&[a1.scores[i], a1.scores[j]], &[a2.scores[i], a2.scores[j]]).is_some())
        .count();
    match rank_inversion(&a1.scores, &a2.scores) {
        None => Ok(AxiomReport::holds(Axiom::BaselineInvariance, 0.0, 1)),
        Some((i, j)) => Ok(AxiomReport::violated(
            Axiom::BaselineInvariance,
            Witness::BaselineInvariance {
                input: input.to_vec(),
                baseline1: baseline1.to_vec(),
                baseline2: baseline2.to_vec(),
                i,
                j,
                attribution1: a1.scores,
                attribution2: a2.scores,
            },
            inverted as f64,
            1,
        )),
    }
}

pub fn check_baseline_invariance(
    f: &dyn DifferentiableFn,
    input: &[f64],
    baseline1: &[f64],
    baseline2: &[f64],
    steps: usize,
) -> Result<AxiomReport> {
    baseline_invariance_at(f, input, baseline1, baseline2, steps)
}

/// Outcome of running the impossibility instance `F(x) = x1 - x2`,
/// `x = (1, 0)`, baselines `(-1, -1)` and `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub input: Vec<f64>,
    pub baseline1: Vec<f64>,
    pub baseline2: Vec<f64>,
    pub attribution1: Attribution,
    pub attribution2: Attribution,
    pub value_input: f64,
    pub value_baseline1: f64,
    pub value_baseline2: f64,
    pub specificity: AxiomReport,
    pub additivity: AxiomReport,
    pub completeness1: AxiomReport,
    pub completeness2: AxiomReport,
    pub baseline_invariance: AxiomReport,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(", "))
}

fn fmt_verdict(v: Verdict) -> &'static str {
    match v {
        Verdict::Holds => "holds",
        Verdict::Violated => "violated",
    }
}

impl Theorem1Report {
    /// Human-readable report; contains no randomness or timing.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "F(x) = x1 - x2, x = {}", fmt_vec(&self.input));
        let _ = writeln!(
            s,
            "F(x) = {}, F(x'1) = {}, F(x'2) = {}",
            self.value_input, self.value_baseline1, self.value_baseline2
        );
        let _ = writeln!(
            s,
            "baseline x'1 = {}: attribution {} (sum {})",
            fmt_vec(&self.baseline1),
            fmt_vec(&self.attribution1.scores),
            self.attribution1.total()
        );
        let _ = writeln!(
            s,
            "baseline x'2 = {}: attribution {} (sum {})",
            fmt_vec(&self.baseline2),
            fmt_vec(&self.attribution2.scores),
            self.attribution2.total()
        );
        let _ = writeln!(
            s,
            "specificity (G(x) = x1, dead dim 2): {}",
            fmt_verdict(self.specificity.verdict)
        );
        let _ = writeln!(s, "additivity (x1 plus -x2): {}", fmt_verdict(self.additivity.verdict));
        let _ = writeln!(
            s,
            "completeness: {} from x'1, {} from x'2",
            fmt_verdict(self.completeness1.verdict),
            fmt_verdict(self.completeness2.verdict)
        );
        if let Some(Witness::BaselineInvariance { i, j, .. }) = &self.baseline_invariance.witness {
            let _ = writeln!(
                s,
                "baseline invariance violated: a{} vs a{} is {} under x'1 and {} under x'2",
                i + 1,
                j + 1,
                fmt_order(self.attribution1.scores[*i], self.attribution1.scores[*j]),
                fmt_order(self.attribution2.scores[*i], self.attribution2.scores[*j]),
            );
        } else {
            let _ = writeln!(s, "baseline invariance holds");
        }
        let _ = writeln!(
            s,
            "the path method satisfies specificity, additivity and completeness here, so it cannot also be baseline invariant"
        );
        s
    }
}

fn fmt_order(a: f64, b: f64) -> String {
    let op = if a < b {
        "<"
    } else if a > b {
        ">"
    } else {
        "="
    };
    format!("{a} {op} {b}")
}

/// Runs the impossibility instance and checks every expected value exactly.
/// Any mismatch is reported as an implementation defect.
pub fn theorem1_demo() -> Result<Theorem1Report> {
    let f = AffineFn::new(vec![1.0, -1.0], 0.0);
    let input = vec![1.0, 0.0];
    let baseline1 = vec![-1.0, -1.0];
    let baseline2 = vec![1.0, 1.0];

    let attribution1 = path_attribute(&f, &PathSpec::straight(&baseline1, &input, DEFAULT_STEPS))?;
    let attribution2 = path_attribute(&f, &PathSpec::straight(&baseline2, &input, DEFAULT_STEPS))?;
    let defect = |what: String| Err(AttributionError::Defect(what));
    if attribution1.scores != [2.0, -1.0] {
        return defect(format!("attribution from (-1,-1) is {:?}", attribution1.scores));
    }
    if attribution2.scores != [0.0, 1.0] {
        return defect(format!("attribution from (1,1) is {:?}", attribution2.scores));
    }

    let first = AffineFn::new(vec![1.0, 0.0], 0.0);
    let specificity = specificity_at(&first, &[1], &input, &baseline1, DEFAULT_STEPS)?;
    let second = AffineFn::new(vec![0.0, 1.0], 0.0);
    let minus_second = NegatedFn(&second);
    let additivity = additivity_at(
        &first,
        &minus_second,
        &PathSpec::straight(&baseline1, &input, DEFAULT_STEPS),
        1e-12,
    )?;
    let completeness1 = completeness_at(&f, &input, &baseline1, DEFAULT_STEPS, 1e-12)?;
    let completeness2 = completeness_at(&f, &input, &baseline2, DEFAULT_STEPS, 1e-12)?;
    let baseline_invariance = baseline_invariance_at(&f, &input, &baseline1, &baseline2, DEFAULT_STEPS)?;

    for r in [&specificity, &additivity, &completeness1, &completeness2] {
        if r.verdict != Verdict::Holds {
            return defect(format!("{} should hold on the linear instance", r.axiom));
        }
    }
    match &baseline_invariance.witness {
        Some(Witness::BaselineInvariance { i: 0, j: 1, .. }) => {}
        other => return defect(format!("expected a rank switch of dims 1 and 2, got {other:?}")),
    }

    Ok(Theorem1Report {
        value_input: f.value(&input),
        value_baseline1: f.value(&baseline1),
        value_baseline2: f.value(&baseline2),
        input,
        baseline1,
        baseline2,
        attribution1,
        attribution2,
        specificity,
        additivity,
        completeness1,
        completeness2,
        baseline_invariance,
    })
}

#[cfg(test)]
mod tests {
    use super::super::ClosureFn;
    use super::*;

    #[test]
    fn specificity_holds_for_unused_dim() {
        let f = AffineFn::new(vec![1.0, 0.0], 0.0);
        let r = check_specificity(&f, &[1], 20, 3).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        assert_eq!(r.max_deviation, 0.0);
        assert_eq!(r.probes, 20);
    }

    #[test]
    fn specificity_rejects_live_dimension_claim() {
        let f = AffineFn::new(vec![1.0, 1.0], 0.0);
        assert!(matches!(
            check_specificity(&f, &[1], 5, 3),
            Err(AttributionError::Precondition {
                axiom: Axiom::Specificity,
                ..
            })
        ));
    }

    #[test]
    fn specificity_violation_has_recheckable_witness() {
        // A deliberately wrong gradient makes a dead dimension receive credit.
        let f = ClosureFn::new(2, |x| x[0]).with_gradient(|_| vec![1.0, 0.5]);
        let r = check_specificity(&f, &[1], 3, 9).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        let Some(Witness::Specificity {
            input,
            baseline,
            dim,
            score,
        }) = r.witness
        else {
            panic!()
        };
        let again = specificity_at(&f, &[dim], &input, &baseline, DEFAULT_STEPS).unwrap();
        assert_eq!(again.verdict, Verdict::Violated);
        assert_eq!(again.max_deviation, score.abs());
    }

    #[test]
    fn additivity_examples() {
        let x1 = AffineFn::new(vec![1.0, 0.0], 0.0);
        let minus_x2 = AffineFn::new(vec![0.0, -1.0], 0.0);
        let path = PathSpec::straight(&[-1.0, -1.0], &[1.0, 0.0], 64);
        let r = additivity_at(&x1, &minus_x2, &path, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);

        let f = ClosureFn::new(2, |x| (x[0] * x[1]).tanh());
        let neg = NegatedFn(&f);
        let zero = SumFn { left: &f, right: &neg };
        let a = path_attribute(&zero, &path).unwrap();
        assert!(a.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn completeness_examples() {
        let f = AffineFn::new(vec![1.0, -1.0], 0.0);
        let r = completeness_at(&f, &[1.0, 0.0], &[-1.0, -1.0], 8, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        let g = ClosureFn::new(2, |x| x[0].sin() + x[1] * x[1]);
        let r = completeness_at(&g, &[0.4, 0.4], &[0.4, 0.4], 8, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        assert_eq!(r.max_deviation, 0.0);
    }

    #[test]
    fn baseline_invariance_examples() {
        let f = AffineFn::new(vec![1.0, -1.0], 0.0);
        let r = check_baseline_invariance(&f, &[1.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0], 16).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        match r.witness.unwrap() {
            Witness::BaselineInvariance {
                i,
                j,
                attribution1,
                attribution2,
                ..
            } => {
                assert_eq!((i, j), (0, 1));
                assert_eq!(attribution1, vec![2.0, -1.0]);
                assert_eq!(attribution2, vec![0.0, 1.0]);
            }
            w => panic!("{w:?}"),
        }

        // F = x1 + x2, x = (2,3): (0,0) gives (2,3) and (1,-1) gives (1,4).
        let g = AffineFn::new(vec![1.0, 1.0], 0.0);
        let r = check_baseline_invariance(&g, &[2.0, 3.0], &[0.0, 0.0], &[1.0, -1.0], 16).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);

        let r = check_baseline_invariance(&f, &[1.0, 0.0], &[0.5, 0.5], &[0.5, 0.5], 16).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);

        assert!(matches!(
            check_baseline_invariance(&f, &[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], 16),
            Err(AttributionError::Precondition { .. })
        ));
    }

    #[test]
    fn ties_are_not_inversions() {
        assert_eq!(rank_inversion(&[1.0, 1.0], &[0.0, 2.0]), None);
        assert_eq!(rank_inversion(&[1.0, 2.0], &[2.0, 1.0]), Some((0, 1)));
    }

    #[test]
    fn theorem1_demo_is_exact_and_stable() {
        let a = theorem1_demo().unwrap();
        let b = theorem1_demo().unwrap();
        assert_eq!(a.render(), b.render());
        assert_eq!(a.attribution1.scores, vec![2.0, -1.0]);
        assert_eq!(a.attribution2.scores, vec![0.0, 1.0]);
        // Both baselines satisfy completeness with ΔF = 1.
        assert_eq!(a.value_input - a.value_baseline1, 1.0);
        assert_eq!(a.value_input - a.value_baseline2, 1.0);
        assert_eq!(a.attribution1.total(), 1.0);
        assert_eq!(a.attribution2.total(), 1.0);
        let text = a.render();
        assert!(text.contains("(2, -1)"));
        assert!(text.contains("(0, 1)"));
        assert!(text.contains("baseline invariance violated: a1 vs a2 is 2 > -1 under x'1 and 0 < 1 under x'2"));
    }
}
