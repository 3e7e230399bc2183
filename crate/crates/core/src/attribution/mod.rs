//! Path-method attribution.
//!
//! An attribution assigns each input dimension a share of `F(x) - F(x')`,
//! where `x'` is a baseline. A path method integrates the gradient of `F`
//! along a path `γ` from `x'` to `x`:
//!
//! ```text
//! a_i = ∫₀¹ ∂_i F(γ(t)) γ_i'(t) dt
//! ```
//!
//! The integral is approximated with the midpoint rule, which is exact
//! whenever the gradient is constant along each path segment. The sum over
//! sample points is always taken sequentially in sample order, so results do
//! not depend on how many threads evaluated the gradients.

mod axioms;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use axioms::{
    additivity_at, baseline_invariance_at, check_additivity, check_baseline_invariance, check_completeness,
    check_specificity, completeness_at, specificity_at, theorem1_demo, Axiom, AxiomReport, Theorem1Report, Verdict,
    Witness, BASELINE_VALUE_TOLERANCE, SPECIFICITY_FUZZ_TOLERANCE, SPECIFICITY_TOLERANCE,
};

/// Default number of midpoint samples per path segment.
pub const DEFAULT_STEPS: usize = 1024;

/// Default step of the central finite-difference gradient.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at path parameter t = {t}")]
    NonFiniteGradient { t: f64 },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("{axiom} precondition violated: {detail}")]
    Precondition { axiom: Axiom, detail: String },
    #[error("implementation defect: {0}")]
    Defect(String),
}

pub type Result<T, E = AttributionError> = std::result::Result<T, E>;

/// A real function of `dim()` variables with a gradient.
///
/// The default gradient is a central finite difference; analytic
/// implementations override it.
pub trait DifferentiableFn: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        central_difference(self, x, DEFAULT_FD_STEP)
    }
}

/// Central finite-difference gradient with step `h`.
pub fn central_difference<F: DifferentiableFn + ?Sized>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f.value(&probe);
            probe[i] = x[i] - h;
            let down = f.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `F(x) = c·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFn {
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

impl AffineFn {
    pub fn new(coefficients: Vec<f64>, bias: f64) -> Self {
        AffineFn { coefficients, bias }
    }
}

impl DifferentiableFn for AffineFn {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.bias
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.coefficients.clone()
    }
}

type ValueFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A function given by closures; without a gradient closure the finite
/// difference default is used.
pub struct ClosureFn {
    dim: usize,
    value: ValueFn,
    gradient: Option<GradFn>,
}

impl ClosureFn {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ClosureFn {
            dim,
            value: Box::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }
}

impl DifferentiableFn for ClosureFn {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => central_difference(self, x, DEFAULT_FD_STEP),
        }
    }
}

/// Pointwise sum `F1 + F2`.
pub struct SumFn<'a> {
    pub left: &'a dyn DifferentiableFn,
    pub right: &'a dyn DifferentiableFn,
}

impl DifferentiableFn for SumFn<'_> {
    fn dim(&self) -> usize {
        self.left.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.left.value(x) + self.right.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.left.gradient(x);
        for (a, b) in g.iter_mut().zip(self.right.gradient(x)) {
            *a += b;
        }
        g
    }
}

/// `-F`.
pub struct NegatedFn<'a>(pub &'a dyn DifferentiableFn);

impl DifferentiableFn for NegatedFn<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        -self.0.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.0.gradient(x).into_iter().map(|g| -g).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    StraightLine,
    /// Interior waypoints visited in order between the baseline and the
    /// input. Each segment takes an equal share of `t`.
    PiecewiseLinear(Vec<Vec<f64>>),
}

/// A path `γ` with `γ(0) = baseline` and `γ(1) = input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub kind: PathKind,
    pub baseline: Vec<f64>,
    pub input: Vec<f64>,
    /// Midpoint samples per segment.
    pub steps: usize,
}

impl PathSpec {
    pub fn straight(baseline: &[f64], input: &[f64], steps: usize) -> Self {
        PathSpec {
            kind: PathKind::StraightLine,
            baseline: baseline.to_vec(),
            input: input.to_vec(),
            steps,
        }
    }

    pub fn piecewise(baseline: &[f64], waypoints: Vec<Vec<f64>>, input: &[f64], steps: usize) -> Self {
        PathSpec {
            kind: PathKind::PiecewiseLinear(waypoints),
            baseline: baseline.to_vec(),
            input: input.to_vec(),
            steps,
        }
    }

    /// The path's corner points, from baseline to input.
    fn corners(&self) -> Vec<&[f64]> {
        let mut pts = vec![self.baseline.as_slice()];
        if let PathKind::PiecewiseLinear(ws) = &self.kind {
            pts.extend(ws.iter().map(Vec::as_slice));
        }
        pts.push(&self.input);
        pts
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(AttributionError::InvalidPath("steps must be at least 1".into()));
        }
        for p in self.corners() {
            if p.len() != dim {
                return Err(AttributionError::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(AttributionError::InvalidPath("path points must be finite".into()));
            }
        }
        Ok(())
    }

    /// `γ(t)` for `t ∈ [0, 1]`.
    pub fn point(&self, t: f64) -> Vec<f64> {
        let corners = self.corners();
        let segments = corners.len() - 1;
        let scaled = (t.clamp(0.0, 1.0) * segments as f64).min(segments as f64);
        let s = (scaled.floor() as usize).min(segments - 1);
        let local = scaled - s as f64;
        corners[s]
            .iter()
            .zip(corners[s + 1])
            .map(|(a, b)| a + local * (b - a))
            .collect()
    }
}

/// Per-dimension scores `(a_1, …, a_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub scores: Vec<f64>,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// Midpoint-rule path attribution.
pub fn path_attribute<F: DifferentiableFn + ?Sized>(f: &F, path: &PathSpec) -> Result<Attribution> {
    let n = f.dim();
    path.validate(n)?;
    let corners = path.corners();
    let segments = corners.len() - 1;
    let m = path.steps;
    let mut scores = vec![0.0; n];

    for s in 0..segments {
        let (from, to) = (corners[s], corners[s + 1]);
        let delta: Vec<f64> = from.iter().zip(to).map(|(a, b)| b - a).collect();
        let grads: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .with_min_len(64)
            .map(|k| {
                let u = (k as f64 + 0.5) / m as f64;
                let p: Vec<f64> = from.iter().zip(&delta).map(|(a, d)| a + u * d).collect();
                f.gradient(&p)
            })
            .collect();

        let mut sum = vec![0.0; n];
        for (k, g) in grads.iter().enumerate() {
            if g.len() != n {
                return Err(AttributionError::DimensionMismatch {
                    expected: n,
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                let t = (s as f64 + (k as f64 + 0.5) / m as f64) / segments as f64;
                return Err(AttributionError::NonFiniteGradient { t });
            }
            for (acc, v) in sum.iter_mut().zip(g) {
                *acc += v;
            }
        }
        for i in 0..n {
            scores[i] += sum[i] * delta[i] / m as f64;
        }
    }
    Ok(Attribution { scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_counterexample_attributions() {
        let f = AffineFn::new(vec![1.0, -1.0], 0.0);
        let a = path_attribute(&f, &PathSpec::straight(&[-1.0, -1.0], &[1.0, 0.0], DEFAULT_STEPS)).unwrap();
        assert_eq!(a.scores, vec![2.0, -1.0]);
        let a = path_attribute(&f, &PathSpec::straight(&[1.0, 1.0], &[1.0, 0.0], DEFAULT_STEPS)).unwrap();
        assert_eq!(a.scores, vec![0.0, 1.0]);
    }

    #[test]
    fn empty_path_is_zero() {
        let f = ClosureFn::new(2, |x| (x[0] * x[1]).sin());
        let a = path_attribute(&f, &PathSpec::straight(&[0.3, 0.4], &[0.3, 0.4], 16)).unwrap();
        assert_eq!(a.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn square_matches_closed_form() {
        let f = ClosureFn::new(1, |x| x[0] * x[0]).with_gradient(|x| vec![2.0 * x[0]]);
        let a = path_attribute(&f, &PathSpec::straight(&[0.0], &[3.0], 1024)).unwrap();
        assert!((a.scores[0] - 9.0).abs() < 1e-3);
    }

    #[test]
    fn affine_is_exact_for_any_steps() {
        let f = AffineFn::new(vec![0.7, -1.3, 2.5], 0.2);
        let x = [1.0, 2.0, -0.5];
        let b = [0.25, -1.0, 3.0];
        for steps in [1, 3, 17, 1000] {
            let a = path_attribute(&f, &PathSpec::straight(&b, &x, steps)).unwrap();
            for i in 0..3 {
                let exact = f.coefficients[i] * (x[i] - b[i]);
                assert!((a.scores[i] - exact).abs() <= 1e-12, "steps {steps} dim {i}");
            }
        }
    }

    #[test]
    fn piecewise_path_on_affine_fn_telescopes() {
        let f = AffineFn::new(vec![2.0, -1.0], 0.0);
        let path = PathSpec::piecewise(&[0.0, 0.0], vec![vec![3.0, -2.0], vec![-1.0, 5.0]], &[1.0, 1.0], 7);
        let a = path_attribute(&f, &path).unwrap();
        assert!((a.scores[0] - 2.0).abs() < 1e-12);
        assert!((a.scores[1] + 1.0).abs() < 1e-12);
        assert_eq!(path.point(0.0), vec![0.0, 0.0]);
        assert_eq!(path.point(1.0), vec![1.0, 1.0]);
    }

    #[test]
    fn piecewise_path_is_path_dependent_for_nonlinear_fn() {
        // F = x1 * x2 from (0,0) to (1,1): through (1,0) all credit goes to x2,
        // through (0,1) all credit goes to x1.
        let f = ClosureFn::new(2, |x| x[0] * x[1]).with_gradient(|x| vec![x[1], x[0]]);
        let via_x1 = path_attribute(
            &f,
            &PathSpec::piecewise(&[0.0, 0.0], vec![vec![1.0, 0.0]], &[1.0, 1.0], 8),
        )
        .unwrap();
        assert_eq!(via_x1.scores, vec![0.0, 1.0]);
        let via_x2 = path_attribute(
            &f,
            &PathSpec::piecewise(&[0.0, 0.0], vec![vec![0.0, 1.0]], &[1.0, 1.0], 8),
        )
        .unwrap();
        assert_eq!(via_x2.scores, vec![1.0, 0.0]);
    }

    #[test]
    fn errors() {
        let f = AffineFn::new(vec![1.0, 1.0], 0.0);
        assert!(matches!(
            path_attribute(&f, &PathSpec::straight(&[0.0], &[1.0, 1.0], 4)),
            Err(AttributionError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            path_attribute(&f, &PathSpec::straight(&[0.0, 0.0], &[1.0, 1.0], 0)),
            Err(AttributionError::InvalidPath(_))
        ));
        let blowup = ClosureFn::new(1, |x| x[0].ln()).with_gradient(|x| vec![1.0 / x[0]]);
        // Midpoints never hit 0 here, so force a pole inside the path.
        let pole = ClosureFn::new(1, |x| x[0]).with_gradient(|x| vec![if x[0] > 0.5 { f64::INFINITY } else { 1.0 }]);
        assert!(path_attribute(&blowup, &PathSpec::straight(&[1.0], &[2.0], 4)).is_ok());
        match path_attribute(&pole, &PathSpec::straight(&[0.0], &[1.0], 4)) {
            Err(AttributionError::NonFiniteGradient { t }) => assert_eq!(t, 0.625),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn finite_difference_default_gradient() {
        let f = ClosureFn::new(2, |x| x[0].sin() * x[1]);
        let g = f.gradient(&[0.3, 2.0]);
        assert!((g[0] - 0.3f64.cos() * 2.0).abs() < 1e-8);
        assert!((g[1] - 0.3f64.sin()).abs() < 1e-8);
    }
}
