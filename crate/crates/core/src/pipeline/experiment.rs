use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    iterative_removal, masked_auc, retrain_final, run_binmask_stage, CutoffResampler, PipelineError, RemovalTrace,
    Result, Stage, StopBaseline, DEFAULT_STOP_DELTA,
};
use crate::matrix::{DenseMatrix, FeatureMatrix};
use crate::metrics::{univariate_model_auc, AucReport, FeatureRanking, Scorer, DEFAULT_BOOTSTRAP};
use crate::neural::{train, write_model, Gating, MlpConfig, MlpModel, TrainConfig, DEFAULT_HIDDEN};
use crate::seed::derive;
use crate::synthehr::{
    build_matrix, filter_codes, generate_cohort, CodeRef, Cohort, CohortConfig, CutoffSampler, FeatureSpace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.2 }
    }
}

/// Everything a full run depends on. The per-component seed fields of
/// `cohort` and `train` are replaced by sub-seeds derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cohort: CohortConfig,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub split: SplitConfig,
    pub stop_delta: f64,
    pub stop_baseline: StopBaseline,
    pub n_boot: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cohort: CohortConfig::default(),
            train: TrainConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            split: SplitConfig::default(),
            stop_delta: DEFAULT_STOP_DELTA,
            stop_baseline: StopBaseline::Stage,
            n_boot: DEFAULT_BOOTSTRAP,
            ci_level: 0.95,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale settings: 5,000 patients, 200 feature columns, 10 planted codes.
    pub fn desk() -> Self {
        ExperimentConfig {
            train: TrainConfig {
                lr: 2e-3,
                lr_mask: 1e-2,
                lambda_mask: 2e-3,
                epochs: 30,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.train.validate()?;
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(PipelineError::Config("test fraction must lie in (0, 1)".into()));
        }
        if !(self.stop_delta >= 0.0 && self.stop_delta.is_finite()) {
            return Err(PipelineError::Config(
                "stop delta must be finite and non-negative".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(PipelineError::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Sub-seeds used by one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub cohort: u64,
    pub split: u64,
    pub test_cutoffs: u64,
    pub train_cutoffs: u64,
    pub init: [u64; 3],
    pub train: [u64; 3],
    pub resample: [u64; 3],
    pub bootstrap: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        let per_stage = |label: &str| {
            [
                derive(master, &format!("{label}.full")),
                derive(master, &format!("{label}.binmask")),
                derive(master, &format!("{label}.final")),
            ]
        };
        Seeds {
            master,
            cohort: derive(master, "cohort"),
            split: derive(master, "split"),
            test_cutoffs: derive(master, "cutoffs.test"),
            train_cutoffs: derive(master, "cutoffs.train"),
            init: per_stage("init"),
            train: per_stage("train"),
            resample: per_stage("resample"),
            bootstrap: derive(master, "bootstrap"),
        }
    }
}

/// Stratified split by patient. Returns sorted (train, test) index lists.
pub fn split_stratified(labels: &[bool], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PipelineError::Config("test fraction must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let has_both = |idx: &[usize]| idx.iter().any(|&i| labels[i]) && idx.iter().any(|&i| !labels[i]);
    if !has_both(&train) {
        return Err(PipelineError::Split("training"));
    }
    if !has_both(&test) {
        return Err(PipelineError::Split("test"));
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub n_features: usize,
    pub features: Vec<String>,
    pub train_auc: f64,
    pub test: AucReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecovery {
    pub planted: Vec<String>,
    /// Planted codes with at least one column in each stage's selection.
    pub binmask: Vec<String>,
    pub reduced: Vec<String>,
    pub final_stage: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub patients_generated: usize,
    pub patients_kept: usize,
    pub train_patients: usize,
    pub test_patients: usize,
    pub codes_kept: usize,
    pub n_features: usize,
    pub rate_scale: f64,
    pub train_zero_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub cohort: CohortSummary,
    pub stages: Vec<StageSummary>,
    pub removal: RemovalTrace,
    pub planted: PlantedRecovery,
    pub ranking: FeatureRanking,
    pub feature_names: Vec<String>,
    #[serde(skip)]
    pub models: Vec<(Stage, MlpModel)>,
}

impl ExperimentReport {
    pub fn stage(&self, stage: Stage) -> &StageSummary {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .expect("every stage is reported")
    }

    /// The last stage whose selection contains `name`.
    pub fn deepest_stage(&self, name: &str) -> Stage {
        self.stages
            .iter()
            .rev()
            .find(|s| s.features.iter().any(|f| f == name))
            .map_or(Stage::Full, |s| s.stage)
    }
}

/// A model over a subset of columns presented as a model over all columns.
pub struct ColumnSubset<'a> {
    model: &'a MlpModel,
    columns: Vec<usize>,
    n_features: usize,
}

impl<'a> ColumnSubset<'a> {
    /// `columns[k]` is the full-space column feeding model input `k`.
    pub fn new(model: &'a MlpModel, columns: Vec<usize>, n_features: usize) -> Result<Self> {
        if columns.len() != model.n_inputs() {
            return Err(PipelineError::Config(format!(
                "{} columns for a model with {} inputs",
                columns.len(),
                model.n_inputs()
            )));
        }
        if let Some(&j) = columns.iter().find(|&&j| j >= n_features) {
            return Err(PipelineError::FeatureRange(j));
        }
        Ok(ColumnSubset {
            model,
            columns,
            n_features,
        })
    }
}

impl Scorer for ColumnSubset<'_> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score_rows(&self, x: &DenseMatrix) -> Vec<f64> {
        self.model.score_rows(&x.select_columns(&self.columns))
    }
}

fn planted_hits(cohort: &Cohort, space: &FeatureSpace, selected: &BTreeSet<usize>) -> Vec<String> {
    cohort
        .ground_truth
        .iter()
        .filter(|&&c| space.code_columns(c).iter().any(|j| selected.contains(j)))
        .map(|c| c.to_string())
        .collect()
}

/// Cohort, feature space, patient split and the matrices at the initial
/// cutoffs, exactly as a full run sees them.
pub struct PreparedData {
    pub generated: Cohort,
    pub cohort: Cohort,
    pub codes: Vec<CodeRef>,
    pub space: FeatureSpace,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub train_cohort: Cohort,
    pub test_cohort: Cohort,
    pub train_sampler: CutoffSampler,
    pub x_train: FeatureMatrix,
    pub x_test: FeatureMatrix,
}

/// Generates the cohort, applies the quality and code filters, splits by
/// patient and derives features at seeded cutoffs. Test cutoffs are drawn
/// here, before any training.
pub fn prepare_data(config: &ExperimentConfig, seeds: &Seeds) -> Result<PreparedData> {
    config.validate()?;
    let cohort_cfg = CohortConfig {
        seed: seeds.cohort,
        ..config.cohort.clone()
    };
    let generated = generate_cohort(&cohort_cfg)?;
    let cohort = generated.quality_filtered();
    let codes = filter_codes(&cohort)?;
    let space = FeatureSpace::new(&codes, cohort.start_year);

    let (train_idx, test_idx) = split_stratified(&cohort.labels, config.split.test_fraction, seeds.split)?;
    let train_cohort = cohort.subset(&train_idx);
    let test_cohort = cohort.subset(&test_idx);

    let test_sampler = CutoffSampler::from_cohort(&test_cohort)?;
    let test_cutoffs = test_sampler.sample_all(&test_cohort, &mut ChaCha8Rng::seed_from_u64(seeds.test_cutoffs))?;
    let x_test = build_matrix(&test_cohort, &test_cutoffs, &space)?;

    let train_sampler = CutoffSampler::from_cohort(&train_cohort)?;
    let train_cutoffs = train_sampler.sample_all(&train_cohort, &mut ChaCha8Rng::seed_from_u64(seeds.train_cutoffs))?;
    let x_train = build_matrix(&train_cohort, &train_cutoffs, &space)?;
    Ok(PreparedData {
        generated,
        cohort,
        codes,
        space,
        train_idx,
        test_idx,
        train_cohort,
        test_cohort,
        train_sampler,
        x_train,
        x_test,
    })
}

/// Generate a cohort, run all four stages and evaluate them on held-out
/// patients.
pub fn full_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let seeds = Seeds::new(config.seed);
    let data = prepare_data(config, &seeds)?;
    let PreparedData {
        generated,
        cohort,
        codes,
        space,
        train_idx,
        test_idx,
        train_cohort,
        test_cohort,
        train_sampler,
        x_train: x_train_sparse,
        x_test,
    } = data;
    let names = space.names();
    let x_test = x_test.to_dense();
    let y_test = &test_cohort.labels;
    let x_train = x_train_sparse.to_dense();
    let y_train = &train_cohort.labels;

    let mlp = |n_inputs: usize, seed: u64| MlpConfig {
        n_inputs,
        hidden: config.hidden.clone(),
        seed,
    };
    let train_cfg = |seed: u64| TrainConfig {
        seed,
        ..config.train.clone()
    };
    let resampler = |seed: u64| CutoffResampler::new(&train_cohort, &space, train_sampler.clone(), seed);
    let all: BTreeSet<usize> = (0..space.len()).collect();

    // Full-feature reference model.
    let mut full_model = MlpModel::new(mlp(space.len(), seeds.init[0]))?;
    {
        let cfg = TrainConfig {
            train_mask: false,
            ..train_cfg(seeds.train[0])
        };
        let mut rs = resampler(seeds.resample[0]);
        let mut refresh = |b: &[usize]| rs.rows(b).expect("training patients have cutoffs");
        let refresh: Option<&mut dyn FnMut(&[usize]) -> DenseMatrix> =
            if cfg.resample_cutoffs { Some(&mut refresh) } else { None };
        train(&mut full_model, &x_train, y_train, &cfg, refresh)?;
    }

    let binmask = {
        let mut rs = resampler(seeds.resample[1]);
        let mut refresh = |b: &[usize]| rs.rows(b).expect("training patients have cutoffs");
        let refresh: Option<&mut dyn FnMut(&[usize]) -> DenseMatrix> = if config.train.resample_cutoffs {
            Some(&mut refresh)
        } else {
            None
        };
        run_binmask_stage(
            &x_train,
            y_train,
            &mlp(space.len(), seeds.init[1]),
            &train_cfg(seeds.train[1]),
            refresh,
        )?
    };
    if binmask.selected.is_empty() {
        return Err(PipelineError::EmptySelection);
    }

    let (reduced_set, trace) = iterative_removal(
        &binmask.model,
        &x_train,
        y_train,
        &binmask.selected,
        config.stop_delta,
        config.stop_baseline,
    )?;

    let final_cols: Vec<usize> = reduced_set.iter().copied().collect();
    let final_stage = {
        let mut rs = resampler(seeds.resample[2]).with_columns(final_cols.clone());
        let mut refresh = |b: &[usize]| rs.rows(b).expect("training patients have cutoffs");
        let refresh: Option<&mut dyn FnMut(&[usize]) -> DenseMatrix> = if config.train.resample_cutoffs {
            Some(&mut refresh)
        } else {
            None
        };
        retrain_final(
            &x_train,
            y_train,
            &reduced_set,
            &mlp(final_cols.len(), seeds.init[2]),
            &train_cfg(seeds.train[2]),
            refresh,
        )?
    };

    let report_for =
        |scores: &[f64]| AucReport::compute(scores, y_test, config.n_boot, config.ci_level, seeds.bootstrap);
    let named = |set: &BTreeSet<usize>| set.iter().map(|&j| names[j].clone()).collect::<Vec<_>>();

    let full_train_auc = crate::metrics::auc(&full_model.forward(&x_train, Gating::Hard)?, y_train)?;
    let full_test = report_for(&full_model.forward(&x_test, Gating::Hard)?)?;
    let binmask_test = {
        let mask: Vec<bool> = (0..space.len()).map(|j| binmask.selected.contains(&j)).collect();
        report_for(
            &binmask
                .model
                .forward(&x_test.zero_columns_except(&mask), Gating::Hard)?,
        )?
    };
    let binmask_train_auc = masked_auc(&binmask.model, &x_train, y_train, &binmask.selected)?;
    let reduced_test = {
        let mask: Vec<bool> = (0..space.len()).map(|j| reduced_set.contains(&j)).collect();
        report_for(
            &binmask
                .model
                .forward(&x_test.zero_columns_except(&mask), Gating::Hard)?,
        )?
    };
    let final_test = report_for(
        &final_stage
            .model
            .forward(&x_test.select_columns(&final_cols), Gating::Hard)?,
    )?;

    let stages = vec![
        StageSummary {
            stage: Stage::Full,
            n_features: all.len(),
            features: named(&all),
            train_auc: full_train_auc,
            test: full_test,
        },
        StageSummary {
            stage: Stage::Binmask,
            n_features: binmask.selected.len(),
            features: named(&binmask.selected),
            train_auc: binmask_train_auc,
            test: binmask_test,
        },
        StageSummary {
            stage: Stage::Reduced,
            n_features: reduced_set.len(),
            features: named(&reduced_set),
            train_auc: trace.final_auc(),
            test: reduced_test,
        },
        StageSummary {
            stage: Stage::Final,
            n_features: final_stage.selected.len(),
            features: named(&final_stage.selected),
            train_auc: final_stage.train_auc,
            test: final_test,
        },
    ];

    let scorer = ColumnSubset::new(&final_stage.model, final_cols, space.len())?;
    let ranking = univariate_model_auc(&scorer, &x_test, y_test, &names)?;

    let planted = PlantedRecovery {
        planted: cohort.ground_truth.iter().map(|c| c.to_string()).collect(),
        binmask: planted_hits(&cohort, &space, &binmask.selected),
        reduced: planted_hits(&cohort, &space, &reduced_set),
        final_stage: planted_hits(&cohort, &space, &final_stage.selected),
    };

    Ok(ExperimentReport {
        config: config.clone(),
        seeds,
        cohort: CohortSummary {
            patients_generated: generated.len(),
            patients_kept: cohort.len(),
            train_patients: train_idx.len(),
            test_patients: test_idx.len(),
            codes_kept: codes.len(),
            n_features: space.len(),
            rate_scale: cohort.rate_scale,
            train_zero_fraction: x_train_sparse.zero_fraction(),
        },
        stages,
        removal: trace,
        planted,
        ranking,
        feature_names: names,
        models: vec![
            (Stage::Full, full_model),
            (Stage::Binmask, binmask.model),
            (Stage::Final, final_stage.model),
        ],
    })
}

fn stage_csv(s: &StageSummary, names: &[String]) -> String {
    let mut out = String::from("column,feature\n");
    for f in &s.features {
        let col = names
            .iter()
            .position(|n| n == f)
            .expect("stage features come from the feature space");
        let _ = writeln!(out, "{col},{f}");
    }
    out
}

/// Human-readable stage table.
pub fn summary_text(report: &ExperimentReport) -> String {
    let mut s = String::new();
    for st in &report.stages {
        let _ = writeln!(
            s,
            "{:<8} {:>4} features  train AUC {:.4}  test AUC {}",
            st.stage.as_str(),
            st.n_features,
            st.train_auc,
            st.test.summary()
        );
    }
    let p = &report.planted;
    let _ = writeln!(
        s,
        "planted codes recovered: binmask {}/{}, reduced {}/{}, final {}/{}",
        p.binmask.len(),
        p.planted.len(),
        p.reduced.len(),
        p.planted.len(),
        p.final_stage.len(),
        p.planted.len()
    );
    s
}

/// Writes the report files into `dir` and returns their names, sorted.
///
/// Files: `report.json`, `stages.csv`, `stage_<name>.csv` per stage,
/// `removal_trace.csv`, `ranking.csv`, `ranking.svg`, `summary.txt` and
/// `model_<name>.json` for each trained model.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        std::fs::write(dir.join(&name), text)?;
        files.push(name);
        Ok(())
    };

    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    put("report.json".into(), json)?;

    let mut table = String::from("stage,n_features,train_auc,test_auc,ci_low,ci_high\n");
    for s in &report.stages {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{}",
            s.stage, s.n_features, s.train_auc, s.test.auc, s.test.ci_low, s.test.ci_high
        );
        put(format!("stage_{}.csv", s.stage), stage_csv(s, &report.feature_names))?;
    }
    put("stages.csv".into(), table)?;

    let mut trace = String::from("step,feature,train_auc,accepted\n");
    let accepted = report.removal.accepted().len();
    for (k, step) in report.removal.steps.iter().enumerate() {
        let _ = writeln!(
            trace,
            "{},{},{},{}",
            k + 1,
            report.feature_names[step.feature],
            step.auc,
            k < accepted
        );
    }
    put("removal_trace.csv".into(), trace)?;

    put(
        "ranking.csv".into(),
        report.ranking.to_csv(|name| report.deepest_stage(name).to_string()),
    )?;
    put("ranking.svg".into(), report.ranking.to_svg())?;
    put("summary.txt".into(), summary_text(report))?;

    for (stage, model) in &report.models {
        let name = format!("model_{stage}.json");
        write_model(&dir.join(&name), model)?;
        files.push(name);
    }
    files.sort();
    Ok(files)
}
