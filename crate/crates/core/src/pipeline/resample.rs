use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::matrix::DenseMatrix;
use crate::synthehr::{derive_features, Cohort, CutoffSampler, FeatureSpace, Result};

/// Rebuilds training rows at freshly drawn cutoffs, one call per minibatch.
pub struct CutoffResampler<'a> {
    cohort: &'a Cohort,
    space: &'a FeatureSpace,
    sampler: CutoffSampler,
    rng: ChaCha8Rng,
    /// Output columns in the full feature space; all columns when `None`.
    columns: Option<Vec<usize>>,
}

impl<'a> CutoffResampler<'a> {
    pub fn new(cohort: &'a Cohort, space: &'a FeatureSpace, sampler: CutoffSampler, seed: u64) -> Self {
        CutoffResampler {
            cohort,
            space,
            sampler,
            rng: ChaCha8Rng::seed_from_u64(seed),
            columns: None,
        }
    }

    pub fn with_columns(mut self, columns: Vec<usize>) -> Self {
        self.columns = Some(columns);
        self
    }

    pub fn n_columns(&self) -> usize {
        self.columns.as_ref().map_or(self.space.len(), Vec::len)
    }

    /// Rows for patients `idx`, in order. Cutoffs are drawn sequentially so
    /// the result does not depend on the thread count.
    pub fn rows(&mut self, idx: &[usize]) -> Result<DenseMatrix> {
        let cutoffs = idx
            .iter()
            .map(|&i| {
                let c = self.cohort;
                self.sampler
                    .sample(&c.patients[i], c.labels[i], c.diagnosis_day[i], &mut self.rng)
            })
            .collect::<Result<Vec<i64>>>()?;
        let n_cols = self.n_columns();
        let position: Option<Vec<Option<usize>>> = self.columns.as_ref().map(|cols| {
            let mut pos = vec![None; self.space.len()];
            for (k, &j) in cols.iter().enumerate() {
                pos[j] = Some(k);
            }
            pos
        });
        let rows: Vec<Vec<f64>> = idx
            .par_iter()
            .zip(cutoffs.par_iter())
            .map(|(&i, &cutoff)| {
                let mut dense = vec![0.0; n_cols];
                for (j, v) in derive_features(&self.cohort.patients[i], cutoff, self.space) {
                    match &position {
                        Some(pos) => {
                            if let Some(k) = pos[j] {
                                dense[k] = v;
                            }
                        }
                        None => dense[j] = v,
                    }
                }
                dense
            })
            .collect();
        let mut data = Vec::with_capacity(idx.len() * n_cols);
        for r in rows {
            data.extend(r);
        }
        Ok(DenseMatrix::from_vec(idx.len(), n_cols, data).expect("row lengths match"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthehr::{build_matrix, generate_cohort, CohortConfig};

    #[test]
    fn matches_build_matrix_at_same_cutoffs() {
        let cohort = generate_cohort(&CohortConfig {
            n_positive: 30,
            n_negative: 50,
            seed: 9,
            ..CohortConfig::default()
        })
        .unwrap();
        let space = FeatureSpace::new(&cohort.vocabulary, cohort.start_year);
        let sampler = CutoffSampler::from_cohort(&cohort).unwrap();
        let idx: Vec<usize> = (0..cohort.len()).collect();
        let got = CutoffResampler::new(&cohort, &space, sampler.clone(), 4)
            .rows(&idx)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cutoffs = sampler.sample_all(&cohort, &mut rng).unwrap();
        let want = build_matrix(&cohort, &cutoffs, &space).unwrap().to_dense();
        assert_eq!(got, want);

        let cols = vec![3, 0, 17];
        let sub = CutoffResampler::new(&cohort, &space, sampler, 4)
            .with_columns(cols.clone())
            .rows(&idx)
            .unwrap();
        assert_eq!(sub, want.select_columns(&cols));
    }

    #[test]
    fn successive_batches_draw_new_cutoffs() {
        let cohort = generate_cohort(&CohortConfig {
            n_positive: 30,
            n_negative: 50,
            seed: 9,
            ..CohortConfig::default()
        })
        .unwrap();
        let space = FeatureSpace::new(&cohort.vocabulary, cohort.start_year);
        let sampler = CutoffSampler::from_cohort(&cohort).unwrap();
        let idx: Vec<usize> = (0..cohort.len()).collect();
        let mut r = CutoffResampler::new(&cohort, &space, sampler, 1);
        let a = r.rows(&idx).unwrap();
        let b = r.rows(&idx).unwrap();
        assert_ne!(a, b);
    }
}
