//! The three-stage selection procedure: BinMask training, iterative feature
//! removal under an AUC budget, and retraining on the surviving features.

mod experiment;
mod resample;

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::DenseMatrix;
use crate::metrics::{auc, MetricsError};
use crate::neural::{binmask_select, train, Gating, MlpConfig, MlpModel, NeuralError, TrainConfig, TrainHistory};
use crate::synthehr::EhrError;

pub use experiment::{
    full_experiment, prepare_data, split_stratified, summary_text, write_report, CohortSummary, ColumnSubset,
    ExperimentConfig, ExperimentReport, PlantedRecovery, PreparedData, Seeds, SplitConfig, StageSummary,
};
pub use resample::CutoffResampler;

pub const DEFAULT_STOP_DELTA: f64 = 0.006;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("the feature selection is empty")]
    EmptySelection,
    #[error("split leaves a single class in the {0} set")]
    Split(&'static str),
    #[error("feature {0} is out of range")]
    FeatureRange(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ehr(#[from] EhrError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Full,
    Binmask,
    Reduced,
    Final,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Full, Stage::Binmask, Stage::Reduced, Stage::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Full => "full",
            Stage::Binmask => "binmask",
            Stage::Reduced => "reduced",
            Stage::Final => "final",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which AUC the removal stop rule compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopBaseline {
    /// The training AUC before any removal.
    #[default]
    Stage,
    /// The training AUC at the start of each iteration.
    Iteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub stage: Stage,
    /// Column indices in the full feature space.
    pub selected: BTreeSet<usize>,
    pub train_auc: f64,
    pub test_auc: Option<f64>,
    pub model: MlpModel,
    pub history: Option<TrainHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub feature: usize,
    /// Training AUC with this feature removed as well.
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalTrace {
    pub baseline_auc: f64,
    pub stop_delta: f64,
    pub stop_baseline: StopBaseline,
    /// Every evaluated removal in order. When `crossed` is set the last step
    /// broke the budget and was reverted.
    pub steps: Vec<RemovalStep>,
    pub crossed: bool,
}

impl RemovalTrace {
    /// Steps that were kept.
    pub fn accepted(&self) -> &[RemovalStep] {
        if self.crossed {
            &self.steps[..self.steps.len() - 1]
        } else {
            &self.steps
        }
    }

    /// Training AUC of the returned set.
    pub fn final_auc(&self) -> f64 {
        self.accepted().last().map_or(self.baseline_auc, |s| s.auc)
    }
}

fn both_classes(labels: &[bool]) -> Result<()> {
    if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
        Ok(())
    } else {
        Err(PipelineError::Split("training"))
    }
}

/// Train a model with the input mask on every column and select the features
/// whose smoothed mask is at least 0.5.
pub fn run_binmask_stage(
    x: &DenseMatrix,
    labels: &[bool],
    mlp: &MlpConfig,
    cfg: &TrainConfig,
    refresh: Option<&mut dyn FnMut(&[usize]) -> DenseMatrix>,
) -> Result<StageResult> {
    both_classes(labels)?;
    let cfg = TrainConfig {
        train_mask: true,
        ..cfg.clone()
    };
    let mut model = MlpModel::new(MlpConfig {
        n_inputs: x.cols(),
        ..mlp.clone()
    })?;
    let history = train(&mut model, x, labels, &cfg, refresh)?;
    let selected = binmask_select(&model)?;
    let train_auc = auc(&model.forward(x, Gating::Hard)?, labels)?;
    Ok(StageResult {
        stage: Stage::Binmask,
        selected,
        train_auc,
        test_auc: None,
        model,
        history: Some(history),
    })
}

/// Training AUC of `model` with every column outside `keep` zeroed.
pub fn masked_auc(model: &MlpModel, x: &DenseMatrix, labels: &[bool], keep: &BTreeSet<usize>) -> Result<f64> {
    let mask: Vec<bool> = (0..x.cols()).map(|j| keep.contains(&j)).collect();
    Ok(auc(
        &model.forward(&x.zero_columns_except(&mask), Gating::Hard)?,
        labels,
    )?)
}

/// Greedy backward elimination without retraining.
///
/// Each iteration zeroes every remaining candidate in turn, measures the
/// training AUC, and removes the candidate with the highest resulting AUC
/// (lowest column index on ties). The loop stops when that best removal
/// would drop the AUC below the reference minus `stop_delta`; that removal
/// is recorded in the trace and reverted. One feature is always kept.
pub fn iterative_removal(
    model: &MlpModel,
    x: &DenseMatrix,
    labels: &[bool],
    selected: &BTreeSet<usize>,
    stop_delta: f64,
    stop_baseline: StopBaseline,
) -> Result<(BTreeSet<usize>, RemovalTrace)> {
    if selected.is_empty() {
        return Err(PipelineError::EmptySelection);
    }
    if let Some(&j) = selected.iter().find(|&&j| j >= x.cols()) {
        return Err(PipelineError::FeatureRange(j));
    }
    if !(stop_delta >= 0.0) {
        return Err(PipelineError::Config("stop delta must be non-negative".into()));
    }
    let rows = x.rows();
    let eff = model.effective_weights(Gating::Hard);
    let n_hidden = model.layers[0].n_out;
    let bias = &model.layers[0].b;
    let factor: Vec<f64> = (0..x.cols()).map(|i| model.input_factor(i, Gating::Hard)).collect();

    let mut current = selected.clone();
    // First-layer pre-activation of one row restricted to `keep` minus `skip`,
    // summed in ascending column order like the forward pass.
    let pre_activation = |r: usize, keep: &BTreeSet<usize>, skip: Option<usize>| -> Vec<f64> {
        let mut out = bias.clone();
        for (i, &v) in x.row(r).iter().enumerate() {
            if v == 0.0 || Some(i) == skip || !keep.contains(&i) {
                continue;
            }
            let v = v * factor[i];
            for (o, &w) in out.iter_mut().zip(&eff[0][i * n_hidden..(i + 1) * n_hidden]) {
                *o += v * w;
            }
        }
        out
    };
    let mut logits: Vec<f64> = (0..rows)
        .into_par_iter()
        .map(|r| model.finish_from_first_layer(&pre_activation(r, &current, None), &eff))
        .collect();
    let baseline_auc = auc(&logits, labels)?;
    let mut trace = RemovalTrace {
        baseline_auc,
        stop_delta,
        stop_baseline,
        steps: Vec::new(),
        crossed: false,
    };
    let mut reference = baseline_auc;

    while current.len() > 1 {
        let candidates: Vec<usize> = current.iter().copied().collect();
        let results: Vec<(usize, f64, Vec<(usize, f64)>)> = candidates
            .par_iter()
            .map(|&j| {
                let changed: Vec<(usize, f64)> = (0..rows)
                    .filter(|&r| x.get(r, j) != 0.0)
                    .map(|r| {
                        (
                            r,
                            model.finish_from_first_layer(&pre_activation(r, &current, Some(j)), &eff),
                        )
                    })
                    .collect();
                let mut scores = logits.clone();
                for &(r, z) in &changed {
                    scores[r] = z;
                }
                let a = auc(&scores, labels).expect("labels hold both classes");
                (j, a, changed)
            })
            .collect();
        let (best, best_auc, changed) = results
            .into_iter()
            .reduce(|a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
            .expect("at least two candidates");
        trace.steps.push(RemovalStep {
            feature: best,
            auc: best_auc,
        });
        if best_auc < reference - stop_delta {
            trace.crossed = true;
            break;
        }
        current.remove(&best);
        for (r, z) in changed {
            logits[r] = z;
        }
        if stop_baseline == StopBaseline::Iteration {
            reference = best_auc;
        }
    }
    Ok((current, trace))
}

/// Train a fresh model on the `selected` columns only.
pub fn retrain_final(
    x: &DenseMatrix,
    labels: &[bool],
    selected: &BTreeSet<usize>,
    mlp: &MlpConfig,
    cfg: &TrainConfig,
    refresh: Option<&mut dyn FnMut(&[usize]) -> DenseMatrix>,
) -> Result<StageResult> {
    if selected.is_empty() {
        return Err(PipelineError::EmptySelection);
    }
    if let Some(&j) = selected.iter().find(|&&j| j >= x.cols()) {
        return Err(PipelineError::FeatureRange(j));
    }
    both_classes(labels)?;
    let cols: Vec<usize> = selected.iter().copied().collect();
    let xs = x.select_columns(&cols);
    let cfg = TrainConfig {
        train_mask: false,
        ..cfg.clone()
    };
    let mut model = MlpModel::new(MlpConfig {
        n_inputs: cols.len(),
        ..mlp.clone()
    })?;
    let history = train(&mut model, &xs, labels, &cfg, refresh)?;
    let train_auc = auc(&model.forward(&xs, Gating::Hard)?, labels)?;
    Ok(StageResult {
        stage: Stage::Final,
        selected: selected.clone(),
        train_auc,
        test_auc: None,
        model,
        history: Some(history),
    })
}
