//! ROC AUC, stratified bootstrap intervals and univariate-model-AUC rankings.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::DenseMatrix;

/// Default number of bootstrap replicates.
pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("AUC is undefined without both classes ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {index} is NaN")]
    NanScore { index: usize },
    #[error("need at least {MIN_BOOTSTRAP} bootstrap replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("model expects {expected} features, matrix has {got}")]
    FeatureCount { expected: usize, got: usize },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn validate(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricsError::NanScore { index });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Indices sorted by score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut starts = vec![0];
    for k in 1..order.len() {
        if scores[order[k]] != scores[order[k - 1]] {
            starts.push(k);
        }
    }
    starts.push(order.len());
    (order, starts)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from the rank sum with average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    let (order, starts) = tie_groups(scores);
    // Sweep groups in increasing score, counting (weighted) concordant pairs.
    // Integer arithmetic keeps the count exact: twice the concordance.
    let mut twice_concordant: u128 = 0;
    let mut neg_below: u128 = 0;
    for w in starts.windows(2) {
        let (mut pos, mut neg) = (0u128, 0u128);
        for &i in &order[w[0]..w[1]] {
            if labels[i] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        twice_concordant += pos * (2 * neg_below + neg);
        neg_below += neg;
    }
    Ok(twice_concordant as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap interval for the AUC.
///
/// Positives and negatives are resampled separately (each with replacement
/// to its own size), so every replicate contains both classes. Quantiles use
/// linear interpolation between order statistics.
pub fn bootstrap_ci(scores: &[f64], labels: &[bool], n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    if n_boot < MIN_BOOTSTRAP {
        return Err(MetricsError::TooFewReplicates(n_boot));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::BadLevel(level));
    }
    let (order, starts) = tie_groups(scores);
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weight = vec![0u64; labels.len()];
    let mut replicates = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        weight.iter_mut().for_each(|w| *w = 0);
        for _ in 0..n_pos {
            weight[positives[rng.random_range(0..n_pos)]] += 1;
        }
        for _ in 0..n_neg {
            weight[negatives[rng.random_range(0..n_neg)]] += 1;
        }
        let mut twice_concordant: u128 = 0;
        let mut neg_below: u128 = 0;
        for w in starts.windows(2) {
            let (mut pos, mut neg) = (0u128, 0u128);
            for &i in &order[w[0]..w[1]] {
                if labels[i] {
                    pos += weight[i] as u128;
                } else {
                    neg += weight[i] as u128;
                }
            }
            twice_concordant += pos * (2 * neg_below + neg);
            neg_below += neg;
        }
        replicates.push(twice_concordant as f64 / (2.0 * n_pos as f64 * n_neg as f64));
    }
    replicates.sort_by(|a, b| a.partial_cmp(b).expect("AUC replicates are finite"));
    let alpha = 1.0 - level;
    Ok((
        quantile_sorted(&replicates, alpha / 2.0),
        quantile_sorted(&replicates, 1.0 - alpha / 2.0),
    ))
}

/// AUC with its bootstrap interval, formatted like `0.834 (95% CI: 0.828 to 0.839)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl AucReport {
    /// The interval is widened to include the point estimate when the
    /// percentile interval happens to miss it.
    pub fn compute(scores: &[f64], labels: &[bool], n_boot: usize, level: f64, seed: u64) -> Result<Self> {
        let point = auc(scores, labels)?;
        let (low, high) = bootstrap_ci(scores, labels, n_boot, level, seed)?;
        let n_pos = labels.iter().filter(|&&l| l).count();
        Ok(AucReport {
            auc: point,
            ci_low: low.min(point),
            ci_high: high.max(point),
            level,
            n_pos,
            n_neg: labels.len() - n_pos,
            n_boot,
            seed,
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "{:.3} ({}% CI: {:.3} to {:.3})",
            self.auc,
            (self.level * 100.0).round(),
            self.ci_low,
            self.ci_high
        )
    }
}

/// Anything that maps feature rows to scores.
pub trait Scorer: Sync {
    fn n_features(&self) -> usize;
    fn score_rows(&self, x: &DenseMatrix) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub auc: f64,
}

/// Features sorted by descending univariate model AUC, ties by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub entries: Vec<RankedFeature>,
}

/// Scores the test set once per feature, keeping that feature's true values
/// and zeroing every other column, and ranks features by the resulting AUC.
pub fn univariate_model_auc<S: Scorer + ?Sized>(
    model: &S,
    x: &DenseMatrix,
    labels: &[bool],
    names: &[String],
) -> Result<FeatureRanking> {
    if x.cols() != model.n_features() || names.len() != x.cols() {
        return Err(MetricsError::FeatureCount {
            expected: model.n_features(),
            got: x.cols(),
        });
    }
    validate(&vec![0.0; labels.len()], labels)?;
    if x.rows() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: x.rows(),
            labels: labels.len(),
        });
    }
    let aucs = (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let mut iso = DenseMatrix::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                iso.set(i, j, x.get(i, j));
            }
            auc(&model.score_rows(&iso), labels)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut entries: Vec<RankedFeature> = names
        .iter()
        .zip(aucs)
        .map(|(name, auc)| RankedFeature {
            name: name.clone(),
            auc,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.auc
            .partial_cmp(&a.auc)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(FeatureRanking { entries })
}

impl FeatureRanking {
    /// `feature,univariate_auc,stage_selected`, in ranking order.
    pub fn to_csv(&self, stage_selected: impl Fn(&str) -> String) -> String {
        let mut s = String::from("feature,univariate_auc,stage_selected\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.name, e.auc, stage_selected(&e.name));
        }
        s
    }

    /// Horizontal bar chart of the ranking with a reference line at 0.5.
    pub fn to_svg(&self) -> String {
        const BAR_H: usize = 16;
        const LABEL_W: usize = 220;
        const PLOT_W: usize = 400;
        let height = 40 + BAR_H * self.entries.len();
        let width = LABEL_W + PLOT_W + 60;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="{LABEL_W}" y="14">univariate model AUC</text>"#);
        for (k, e) in self.entries.iter().enumerate() {
            let y = 24 + k * BAR_H;
            let w = (e.auc.clamp(0.0, 1.0) * PLOT_W as f64).round() as usize;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                LABEL_W - 6,
                y + BAR_H - 4,
                xml_escape(&e.name)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{LABEL_W}" y="{}" width="{w}" height="{}" fill="#4878a8"/>"##,
                y + 2,
                BAR_H - 4
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">{:.3}</text>"#,
                LABEL_W + w + 4,
                y + BAR_H - 4,
                e.auc
            );
        }
        let mid = LABEL_W + PLOT_W / 2;
        let _ = writeln!(
            s,
            r##"<line x1="{mid}" y1="20" x2="{mid}" y2="{}" stroke="#888" stroke-dasharray="4 3"/>"##,
            height - 10
        );
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.3, 0.6], &[true, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::SingleClass {
                positives: 2,
                negatives: 0
            })
        ));
        assert!(bootstrap_ci(&[0.1, 0.2], &[false, false], 200, 0.95, 1).is_err());
    }

    #[test]
    fn perfect_separation_interval() {
        let scores: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let labels: Vec<bool> = (0..1000).map(|i| i >= 500).collect();
        assert_eq!(bootstrap_ci(&scores, &labels, 1000, 0.95, 4).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_is_seeded() {
        let scores: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64).collect();
        let labels: Vec<bool> = (0..300).map(|i| i % 3 == 0).collect();
        let a = bootstrap_ci(&scores, &labels, 200, 0.95, 11).unwrap();
        let b = bootstrap_ci(&scores, &labels, 200, 0.95, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.0 >= 0.0 && a.1 <= 1.0 && a.0 <= a.1);
        let r = AucReport::compute(&scores, &labels, 200, 0.95, 11).unwrap();
        assert!(r.ci_low <= r.auc && r.auc <= r.ci_high);
    }

    struct ColumnSum;
    impl Scorer for ColumnSum {
        fn n_features(&self) -> usize {
            3
        }
        fn score_rows(&self, x: &DenseMatrix) -> Vec<f64> {
            (0..x.rows()).map(|i| 2.0 * x.get(i, 0) + 0.1 * x.get(i, 1)).collect()
        }
    }

    #[test]
    fn univariate_ranking() {
        let labels = vec![true, true, false, false, true, false];
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| vec![if l { 1.0 } else { 0.0 }, (i % 2) as f64, 0.0])
            .collect();
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let names: Vec<String> = ["planted", "noise", "empty"].iter().map(|s| s.to_string()).collect();
        let r = univariate_model_auc(&ColumnSum, &x, &labels, &names).unwrap();
        assert_eq!(r.entries[0].name, "planted");
        assert_eq!(r.entries[0].auc, 1.0);
        let empty = r.entries.iter().find(|e| e.name == "empty").unwrap();
        assert_eq!(empty.auc, 0.5);
        let csv = r.to_csv(|_| "final".into());
        assert!(csv.starts_with("feature,univariate_auc,stage_selected\nplanted,1,final\n"));
        assert!(r.to_svg().contains("planted"));
    }

    proptest! {
        #[test]
        fn matches_pairwise_and_is_rank_based(
            data in proptest::collection::vec((0u8..12, any::<bool>()), 2..80)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 / 4.0).collect();
            let labels: Vec<bool> = data.iter().map(|&(_, l)| l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((a - pairwise(&scores, &labels)).abs() <= 1e-12);
            let squashed: Vec<f64> = scores.iter().map(|s| (s * 3.0 - 1.0).exp()).collect();
            prop_assert_eq!(auc(&squashed, &labels).unwrap(), a);
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((auc(&negated, &labels).unwrap() - (1.0 - a)).abs() <= 1e-12);
        }
    }
}
