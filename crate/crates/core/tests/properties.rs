use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use soundex::attribution::{path_attribute, AffineFn, DifferentiableFn, PathSpec};
use soundex::compgraph::{Cut, GraphBuilder, OpSpec, Side};
use soundex::matrix::DenseMatrix;
use soundex::metrics::{auc, AucReport};
use soundex::neural::{to_compgraph, Gating, MlpConfig, MlpModel};
use soundex::synthehr::{derive_features, generate_cohort, CohortConfig, CutoffSampler, FeatureSpace};

fn model(seed: u64, n: usize) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MlpModel::new(MlpConfig::new(n, seed).with_hidden(&[5, 3])).unwrap();
    for l in &mut m.layers {
        for b in &mut l.b {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    m
}

fn rows(seed: u64, n_rows: usize, n: usize) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_rows * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    DenseMatrix::from_vec(n_rows, n, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_attribution_is_exact(
        c in prop::collection::vec(-3.0f64..3.0, 3),
        x in prop::collection::vec(-3.0f64..3.0, 3),
        b in prop::collection::vec(-3.0f64..3.0, 3),
        steps in 1usize..64,
    ) {
        let f = AffineFn::new(c.clone(), 0.25);
        let a = path_attribute(&f, &PathSpec::straight(&b, &x, steps)).unwrap();
        for i in 0..3 {
            prop_assert!((a.scores[i] - c[i] * (x[i] - b[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn completeness_error_shrinks_with_steps(seed in 0u64..1000) {
        let m = model(seed, 4);
        let pts = rows(seed + 1, 2, 4);
        let (x, b) = (pts.row(0), pts.row(1));
        let delta = m.value(x) - m.value(b);
        let err = |steps| {
            let a = path_attribute(&m, &PathSpec::straight(b, x, steps)).unwrap();
            (a.total() - delta).abs()
        };
        let (coarse, fine) = (err(256), err(512));
        prop_assert!(coarse < 1e-11 || fine <= 0.75 * coarse, "{coarse:e} -> {fine:e}");
    }

    #[test]
    fn auc_complement_symmetry(
        pairs in prop::collection::btree_map(-1000i64..1000, any::<bool>(), 2..80),
    ) {
        let (scores, labels): (Vec<f64>, Vec<bool>) = pairs.into_iter().map(|(s, l)| (s as f64, l)).unzip();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((auc(&neg, &labels).unwrap() - (1.0 - a)).abs() <= 1e-12);
    }

    #[test]
    fn bootstrap_interval_brackets_the_estimate(
        scores in prop::collection::vec(0u8..20, 10..60),
        labels in prop::collection::vec(any::<bool>(), 60),
        seed in any::<u64>(),
    ) {
        let labels = &labels[..scores.len()];
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let r = AucReport::compute(&scores, labels, 200, 0.95, seed).unwrap();
        prop_assert!(0.0 <= r.ci_low && r.ci_low <= r.auc && r.auc <= r.ci_high && r.ci_high <= 1.0);
        prop_assert_eq!(r, AucReport::compute(&scores, labels, 200, 0.95, seed).unwrap());
    }

    #[test]
    fn cut_acceptance_matches_the_clauses(sides in prop::collection::vec(any::<bool>(), 5)) {
        let mut b = GraphBuilder::new();
        let x0 = b.input("x0");
        let x1 = b.input("x1");
        let h = b.internal("h", OpSpec::Sum, &[x0, x1]);
        let k = b.internal("k", OpSpec::Tanh, &[h]);
        b.output("t", OpSpec::Sum, &[h, k]);
        let g = b.build().unwrap();
        let side: Vec<Side> = sides.iter().map(|&s| if s { Side::S } else { Side::T }).collect();
        let valid = side[0] == Side::S && side[1] == Side::S && side[4] == Side::T;
        match Cut::new(&g, side.clone()) {
            Ok(cut) => {
                prop_assert!(valid);
                prop_assert_eq!(cut.sides(), &side[..]);
            }
            Err(_) => prop_assert!(!valid),
        }
    }

    #[test]
    fn zeroed_column_equals_closed_gate(seed in 0u64..1000, col in 0usize..4) {
        let m = model(seed, 4);
        let x = rows(seed + 7, 6, 4);
        let mut gated = m.clone();
        gated.input_mask.theta[col] = -1.0;
        let mut keep = vec![true; 4];
        keep[col] = false;
        let zeroed = m.forward(&x.zero_columns_except(&keep), Gating::Hard).unwrap();
        let closed = gated.forward(&x, Gating::Hard).unwrap();
        for (a, b) in zeroed.iter().zip(&closed) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn graph_export_preserves_outputs(seed in 0u64..1000, mask in 1u8..16) {
        let m = model(seed, 4);
        let selected: BTreeSet<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
        let (g, _) = to_compgraph(&m, &selected).unwrap();
        let x = rows(seed + 3, 8, 4);
        let keep: Vec<bool> = (0..4).map(|i| selected.contains(&i)).collect();
        let want = m.forward(&x.zero_columns_except(&keep), Gating::Hard).unwrap();
        for (r, w) in want.iter().enumerate() {
            let got = g.evaluate(x.row(r)).unwrap().output;
            prop_assert!((got - w).abs() <= 1e-9, "{got} vs {w}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn nonzero_features_have_their_existence_flag(seed in any::<u64>()) {
        let cohort = generate_cohort(&CohortConfig {
            n_positive: 40,
            n_negative: 80,
            seed,
            ..CohortConfig::default()
        })
        .unwrap();
        let space = FeatureSpace::new(&cohort.vocabulary, cohort.start_year);
        let sampler = CutoffSampler::from_cohort(&cohort).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cutoffs = sampler.sample_all(&cohort, &mut rng).unwrap();
        for (p, &c) in cohort.patients.iter().zip(&cutoffs) {
            let row = derive_features(p, c, &space);
            let mut dense = vec![0.0; space.len()];
            for &(j, v) in &row {
                dense[j] = v;
            }
            for (j, &v) in dense.iter().enumerate() {
                if let Some(e) = space.existence_column(j) {
                    if v != 0.0 {
                        prop_assert_eq!(dense[e], 1.0, "column {} of patient {}", j, p.id);
                    }
                    if dense[e] == 0.0 {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
}
