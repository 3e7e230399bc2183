use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gating, MlpModel, NeuralError, Result};
use crate::matrix::DenseMatrix;
use crate::metrics::auc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Learning rate for weights, biases and weight gates.
    pub lr: f64,
    /// Learning rate for the input-mask gate parameters.
    pub lr_mask: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_mask: f64,
    pub lambda_weight: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// When false the input mask is frozen and excluded from the penalty.
    pub train_mask: bool,
    /// Regenerate each minibatch's rows (new cutoff dates) before the step.
    pub resample_cutoffs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_mask: 1e-3,
            batch_size: 256,
            epochs: 30,
            lambda_mask: 1e-3,
            lambda_weight: 1e-5,
            adam: AdamConfig::default(),
            seed: 0,
            train_mask: true,
            resample_cutoffs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.lr_mask, self.adam.eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(NeuralError::Config("learning rates and eps must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(NeuralError::Config("batch size and epochs must be positive".into()));
        }
        if !(self.lambda_mask >= 0.0 && self.lambda_weight >= 0.0) {
            return Err(NeuralError::Config("penalty coefficients must be non-negative".into()));
        }
        let betas = [self.adam.beta1, self.adam.beta2];
        if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(NeuralError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_auc: f64,
    /// Input gates open at the end of the epoch.
    pub open_inputs: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64, c: &AdamConfig) {
        let bc1 = 1.0 - c.beta1.powf(t as f64);
        let bc2 = 1.0 - c.beta2.powf(t as f64);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g;
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
}

/// Root-mean-square of each column; empty columns get scale 1.
fn fit_input_scale(x: &DenseMatrix) -> Vec<f64> {
    let mut sq = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (s, v) in sq.iter_mut().zip(x.row(r)) {
            *s += v * v;
        }
    }
    sq.into_iter()
        .map(|s| {
            let rms = (s / x.rows() as f64).sqrt();
            if rms > 0.0 {
                1.0 / rms
            } else {
                1.0
            }
        })
        .collect()
}

/// Minibatch Adam training with hard gates.
///
/// A fresh model (no previous training steps) first fixes its input scale to
/// the inverse column RMS of `x`. When `refresh` is given it is called with
/// the row indices of every minibatch and must return those rows, in order,
/// for the step. Training AUC in the history is measured on `x`.
pub fn train(
    model: &mut MlpModel,
    x: &DenseMatrix,
    labels: &[bool],
    cfg: &TrainConfig,
    mut refresh: Option<&mut dyn FnMut(&[usize]) -> DenseMatrix>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if x.cols() != model.n_inputs() {
        return Err(NeuralError::Shape {
            expected: model.n_inputs(),
            got: x.cols(),
        });
    }
    if x.rows() != labels.len() {
        return Err(NeuralError::LabelCount {
            rows: x.rows(),
            labels: labels.len(),
        });
    }
    if !(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)) {
        return Err(NeuralError::SingleClass);
    }
    if model.input_mask.updates == 0 {
        model.input_scale = fit_input_scale(x);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_moments: Vec<Moments> = model.layers.iter().map(|l| Moments::new(l.w.len())).collect();
    let mut b_moments: Vec<Moments> = model.layers.iter().map(|l| Moments::new(l.b.len())).collect();
    let mut wg_moments = Moments::new(model.weight_gates.len());
    let mut mask_moments = Moments::new(model.input_mask.len());
    let lambda_mask = if cfg.train_mask { cfg.lambda_mask } else { 0.0 };

    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut history = TrainHistory::default();
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = match refresh.as_mut() {
                Some(f) => {
                    let m = f(batch);
                    if m.rows() != batch.len() || m.cols() != x.cols() {
                        return Err(NeuralError::Shape {
                            expected: x.cols(),
                            got: m.cols(),
                        });
                    }
                    m
                }
                None => x.select_rows(batch),
            };
            let yb: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let (parts, g) = model.loss(&xb, &yb, lambda_mask, cfg.lambda_weight)?;
            loss_sum += parts.total * batch.len() as f64;

            t += 1;
            for (l, layer) in model.layers.iter_mut().enumerate() {
                w_moments[l].step(&mut layer.w, &g.w[l], cfg.lr, t, &cfg.adam);
                b_moments[l].step(&mut layer.b, &g.b[l], cfg.lr, t, &cfg.adam);
            }
            wg_moments.step(&mut model.weight_gates.theta, &g.weight_theta, cfg.lr, t, &cfg.adam);
            if cfg.train_mask {
                mask_moments.step(&mut model.input_mask.theta, &g.mask_theta, cfg.lr_mask, t, &cfg.adam);
            }
            model.weight_gates.update_ema();
            model.input_mask.update_ema();
        }
        let scores = model.forward(x, Gating::Hard)?;
        let train_auc = auc(&scores, labels).map_err(|_| NeuralError::SingleClass)?;
        let loss = loss_sum / x.rows() as f64;
        if !loss.is_finite() {
            return Err(NeuralError::NonFinite);
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            train_auc,
            open_inputs: (0..model.n_inputs())
                .filter(|&i| model.input_mask.hard(i) == 1.0)
                .count(),
        });
    }
    history.steps = t;
    Ok(history)
}

/// Features whose smoothed mask is at least 0.5.
pub fn binmask_select(model: &MlpModel) -> Result<BTreeSet<usize>> {
    if model.input_mask.updates == 0 {
        return Err(NeuralError::Stale);
    }
    Ok(model
        .input_mask
        .ema_mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m >= 0.5)
        .map(|(i, _)| i)
        .collect())
}
