//! A small multilayer perceptron with L0-gated weights and a BinMask input
//! gate.
//!
//! Gates are hard in the forward pass (`b = 1[θ ≥ 0]`) and straight-through in
//! the backward pass, where the derivative of `σ(θ/τ)` stands in for the step
//! function. The penalty term uses the smooth surrogate `Σ σ(θ/τ)`.

mod export;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::DifferentiableFn;
use crate::compgraph::{sigmoid, GraphError};
use crate::matrix::DenseMatrix;
use crate::metrics::Scorer;

pub use export::{read_model, to_compgraph, write_model, MODEL_FORMAT, MODEL_VERSION};
pub use train::{binmask_select, train, AdamConfig, EpochRecord, TrainConfig, TrainHistory};

/// θ such that σ(θ) = 0.9, so every gate starts open.
pub const GATE_INIT: f64 = 2.197_224_577_336_219_6;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 20];
pub const DEFAULT_EMA_DECAY: f64 = 0.99;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("expected {expected} feature columns, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("loss is not finite")]
    NonFinite,
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("the smoothed mask has never been updated; train the model first")]
    Stale,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NeuralError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n_inputs: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(n_inputs: usize, seed: u64) -> Self {
        MlpConfig {
            n_inputs,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed,
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.hidden = hidden.to_vec();
        self
    }
}

/// A vector of L0 gates with their smoothed (EMA) binary values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVector {
    pub theta: Vec<f64>,
    pub temperature: f64,
    pub ema_mask: Vec<f64>,
    pub ema_decay: f64,
    /// Number of training steps that updated `ema_mask`.
    pub updates: u64,
}

impl GateVector {
    pub fn new(len: usize) -> Self {
        GateVector {
            theta: vec![GATE_INIT; len],
            temperature: DEFAULT_TEMPERATURE,
            ema_mask: vec![1.0; len],
            ema_decay: DEFAULT_EMA_DECAY,
            updates: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    #[inline]
    pub fn hard(&self, i: usize) -> f64 {
        if self.theta[i] >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn surrogate(&self, i: usize) -> f64 {
        sigmoid(self.theta[i] / self.temperature)
    }

    /// d σ(θ/τ) / dθ.
    pub fn surrogate_slope(&self, i: usize) -> f64 {
        let s = self.surrogate(i);
        s * (1.0 - s) / self.temperature
    }

    pub fn penalty(&self) -> f64 {
        (0..self.len()).map(|i| self.surrogate(i)).sum()
    }

    pub fn update_ema(&mut self) {
        let rho = self.ema_decay;
        for i in 0..self.theta.len() {
            let b = self.hard(i);
            self.ema_mask[i] = rho * self.ema_mask[i] + (1.0 - rho) * b;
        }
        self.updates += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    Hard,
    Off,
}

/// Weights are stored input-major: `w[i * n_out + o]` connects input `i` to
/// unit `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
    /// One gate per weight, layers concatenated in order.
    pub weight_gates: GateVector,
    pub input_mask: GateVector,
    /// Fixed per-feature input scaling applied before the input gate.
    pub input_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub weight_theta: Vec<f64>,
    pub mask_theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub cross_entropy: f64,
    pub mask_penalty: f64,
    pub weight_penalty: f64,
}

struct Cache {
    /// Scaled and gated input.
    xe: Vec<f64>,
    /// Post-activation output of each hidden layer.
    hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl MlpModel {
    pub fn new(config: MlpConfig) -> Result<Self> {
        if config.n_inputs == 0 || config.hidden.iter().any(|&h| h == 0) {
            return Err(NeuralError::Config("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![config.n_inputs];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let layers: Vec<Layer> = sizes
            .windows(2)
            .map(|p| {
                let limit = (6.0 / (p[0] + p[1]) as f64).sqrt();
                Layer {
                    n_in: p[0],
                    n_out: p[1],
                    w: (0..p[0] * p[1]).map(|_| rng.random_range(-limit..limit)).collect(),
                    b: vec![0.0; p[1]],
                }
            })
            .collect();
        let n_weights = layers.iter().map(|l| l.w.len()).sum();
        Ok(MlpModel {
            weight_gates: GateVector::new(n_weights),
            input_mask: GateVector::new(config.n_inputs),
            input_scale: vec![1.0; config.n_inputs],
            config,
            layers,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.config.n_inputs
    }

    fn weight_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            off.push(acc);
            acc += l.w.len();
        }
        off
    }

    /// Weights multiplied by their gates.
    pub fn effective_weights(&self, gating: Gating) -> Vec<Vec<f64>> {
        let offsets = self.weight_offsets();
        self.layers
            .iter()
            .zip(offsets)
            .map(|(l, off)| match gating {
                Gating::Off => l.w.clone(),
                Gating::Hard => {
                    l.w.iter()
                        .enumerate()
                        .map(|(k, &w)| w * self.weight_gates.hard(off + k))
                        .collect()
                }
            })
            .collect()
    }

    /// Multiplier applied to raw column `i` before the first layer.
    pub fn input_factor(&self, i: usize, gating: Gating) -> f64 {
        match gating {
            Gating::Off => self.input_scale[i],
            Gating::Hard => self.input_scale[i] * self.input_mask.hard(i),
        }
    }

    fn check_cols(&self, cols: usize) -> Result<()> {
        if cols != self.n_inputs() {
            return Err(NeuralError::Shape {
                expected: self.n_inputs(),
                got: cols,
            });
        }
        Ok(())
    }

    fn run(&self, x: &[f64], rows: usize, gating: Gating, eff: &[Vec<f64>]) -> Cache {
        let n = self.n_inputs();
        let factors: Vec<f64> = (0..n).map(|i| self.input_factor(i, gating)).collect();
        let mut xe = vec![0.0; rows * n];
        for r in 0..rows {
            for i in 0..n {
                let v = x[r * n + i];
                if v != 0.0 {
                    xe[r * n + i] = v * factors[i];
                }
            }
        }
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let mut logits = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { &xe } else { &hidden[l - 1] };
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let mut out = vec![0.0; rows * n_out];
            for r in 0..rows {
                let o_row = &mut out[r * n_out..(r + 1) * n_out];
                o_row.copy_from_slice(&layer.b);
                for i in 0..n_in {
                    let v = input[r * n_in + i];
                    if v == 0.0 {
                        continue;
                    }
                    let w_row = &eff[l][i * n_out..(i + 1) * n_out];
                    for (o, &w) in o_row.iter_mut().zip(w_row) {
                        *o += v * w;
                    }
                }
            }
            if l + 1 < self.layers.len() {
                out.iter_mut().for_each(|a| *a = a.tanh());
                hidden.push(out);
            } else {
                logits = out;
            }
        }
        Cache { xe, hidden, logits }
    }

    /// Output logits for each row.
    pub fn logits(&self, x: &DenseMatrix, gating: Gating) -> Result<Vec<f64>> {
        self.check_cols(x.cols())?;
        let eff = self.effective_weights(gating);
        const CHUNK: usize = 512;
        let n = self.n_inputs();
        let parts: Vec<Vec<f64>> = x
            .data()
            .par_chunks(CHUNK * n.max(1))
            .map(|chunk| self.run(chunk, chunk.len() / n, gating, &eff).logits)
            .collect();
        Ok(parts.concat())
    }

    /// Predicted probabilities for each row.
    pub fn forward(&self, x: &DenseMatrix, gating: Gating) -> Result<Vec<f64>> {
        Ok(self.logits(x, gating)?.into_iter().map(sigmoid).collect())
    }

    /// Probability for a single row.
    pub fn predict_row(&self, row: &[f64], gating: Gating) -> f64 {
        assert_eq!(row.len(), self.n_inputs(), "row length");
        let eff = self.effective_weights(gating);
        sigmoid(self.run(row, 1, gating, &eff).logits[0])
    }

    /// First-layer pre-activations for each row under hard gating; the rest
    /// of the network can be finished with [`MlpModel::finish_from_first_layer`].
    pub fn first_layer(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_cols(x.cols())?;
        let eff = self.effective_weights(Gating::Hard);
        let l0 = &self.layers[0];
        let mut out = vec![0.0; x.rows() * l0.n_out];
        for r in 0..x.rows() {
            let o_row = &mut out[r * l0.n_out..(r + 1) * l0.n_out];
            o_row.copy_from_slice(&l0.b);
            for (i, &v) in x.row(r).iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let v = v * self.input_factor(i, Gating::Hard);
                for (o, &w) in o_row.iter_mut().zip(&eff[0][i * l0.n_out..(i + 1) * l0.n_out]) {
                    *o += v * w;
                }
            }
        }
        Ok(out)
    }

    /// Change in first-layer pre-activation caused by zeroing column `i`
    /// whose raw value is `v`.
    pub fn first_layer_column(&self, i: usize, v: f64, eff0: &[f64], out: &mut [f64]) {
        let n_out = self.layers[0].n_out;
        let v = v * self.input_factor(i, Gating::Hard);
        for (o, &w) in out.iter_mut().zip(&eff0[i * n_out..(i + 1) * n_out]) {
            *o = v * w;
        }
    }

    /// Logit from a first-layer pre-activation vector, with hard gating.
    pub fn finish_from_first_layer(&self, pre: &[f64], eff: &[Vec<f64>]) -> f64 {
        let mut cur: Vec<f64> = pre.iter().map(|a| a.tanh()).collect();
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let mut out = layer.b.clone();
            for (i, &v) in cur.iter().enumerate() {
                for (o, &w) in out.iter_mut().zip(&eff[l][i * layer.n_out..(i + 1) * layer.n_out]) {
                    *o += v * w;
                }
            }
            if l + 1 < self.layers.len() {
                out.iter_mut().for_each(|a| *a = a.tanh());
            }
            cur = out;
        }
        cur[0]
    }

    /// Mean cross-entropy with L0 penalties, and its gradients under hard
    /// gating with straight-through gate derivatives.
    pub fn loss(
        &self,
        x: &DenseMatrix,
        labels: &[bool],
        lambda_mask: f64,
        lambda_weight: f64,
    ) -> Result<(LossParts, Gradients)> {
        self.check_cols(x.cols())?;
        if x.rows() != labels.len() {
            return Err(NeuralError::LabelCount {
                rows: x.rows(),
                labels: labels.len(),
            });
        }
        let rows = x.rows();
        let eff = self.effective_weights(Gating::Hard);
        let cache = self.run(x.data(), rows, Gating::Hard, &eff);

        let mut ce = 0.0;
        let mut delta: Vec<f64> = Vec::with_capacity(rows);
        for (r, &z) in cache.logits.iter().enumerate() {
            let y = if labels[r] { 1.0 } else { 0.0 };
            ce += softplus(z) - y * z;
            delta.push((sigmoid(z) - y) / rows as f64);
        }
        ce /= rows as f64;
        let mask_penalty = self.input_mask.penalty();
        let weight_penalty = self.weight_gates.penalty();
        let total = ce + lambda_mask * mask_penalty + lambda_weight * weight_penalty;
        if !total.is_finite() {
            return Err(NeuralError::NonFinite);
        }

        let n_layers = self.layers.len();
        let mut gw_eff: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        let mut gb: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        let mut input_delta = Vec::new();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let input: &[f64] = if l == 0 { &cache.xe } else { &cache.hidden[l - 1] };
            let mut g_w = vec![0.0; n_in * n_out];
            let mut g_b = vec![0.0; n_out];
            for r in 0..rows {
                let d = &delta[r * n_out..(r + 1) * n_out];
                for (gb_o, &d_o) in g_b.iter_mut().zip(d) {
                    *gb_o += d_o;
                }
                for i in 0..n_in {
                    let v = input[r * n_in + i];
                    if v == 0.0 {
                        continue;
                    }
                    for (g, &d_o) in g_w[i * n_out..(i + 1) * n_out].iter_mut().zip(d) {
                        *g += v * d_o;
                    }
                }
            }
            // Propagate to the layer input. For the first layer only entries
            // with a nonzero raw value are needed (the mask gradient).
            let mut prev = vec![0.0; rows * n_in];
            for r in 0..rows {
                let d = &delta[r * n_out..(r + 1) * n_out];
                for i in 0..n_in {
                    if l == 0 && x.data()[r * n_in + i] == 0.0 {
                        continue;
                    }
                    let w_row = &eff[l][i * n_out..(i + 1) * n_out];
                    let s: f64 = w_row.iter().zip(d).map(|(w, d)| w * d).sum();
                    prev[r * n_in + i] = if l > 0 {
                        let h = input[r * n_in + i];
                        s * (1.0 - h * h)
                    } else {
                        s
                    };
                }
            }
            gw_eff[l] = g_w;
            gb[l] = g_b;
            if l == 0 {
                input_delta = prev;
            } else {
                delta = prev;
            }
        }

        let offsets = self.weight_offsets();
        let mut weight_theta = vec![0.0; self.weight_gates.len()];
        let mut gw = Vec::with_capacity(n_layers);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut g = gw_eff[l].clone();
            for k in 0..g.len() {
                let gate = offsets[l] + k;
                let slope = self.weight_gates.surrogate_slope(gate);
                weight_theta[gate] = gw_eff[l][k] * layer.w[k] * slope + lambda_weight * slope;
                g[k] *= self.weight_gates.hard(gate);
            }
            gw.push(g);
        }

        let n = self.n_inputs();
        let mut mask_theta = vec![0.0; n];
        for r in 0..rows {
            for i in 0..n {
                let v = x.data()[r * n + i];
                if v != 0.0 {
                    mask_theta[i] += input_delta[r * n + i] * v * self.input_scale[i];
                }
            }
        }
        for (i, g) in mask_theta.iter_mut().enumerate() {
            let slope = self.input_mask.surrogate_slope(i);
            *g = *g * slope + lambda_mask * slope;
        }

        Ok((
            LossParts {
                total,
                cross_entropy: ce,
                mask_penalty,
                weight_penalty,
            },
            Gradients {
                w: gw,
                b: gb,
                weight_theta,
                mask_theta,
            },
        ))
    }

    /// Gradient of the hard-gated output probability with respect to the raw
    /// input row.
    pub fn input_gradient(&self, row: &[f64]) -> Vec<f64> {
        let eff = self.effective_weights(Gating::Hard);
        let cache = self.run(row, 1, Gating::Hard, &eff);
        let p = sigmoid(cache.logits[0]);
        let mut delta = vec![p * (1.0 - p)];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let mut prev = vec![0.0; layer.n_in];
            for (i, pv) in prev.iter_mut().enumerate() {
                let s: f64 = eff[l][i * layer.n_out..(i + 1) * layer.n_out]
                    .iter()
                    .zip(&delta)
                    .map(|(w, d)| w * d)
                    .sum();
                *pv = if l > 0 {
                    let h = cache.hidden[l - 1][i];
                    s * (1.0 - h * h)
                } else {
                    s * self.input_factor(i, Gating::Hard)
                };
            }
            delta = prev;
        }
        delta
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of probabilities, clipped to `[1e-9, 1 - 1e-9]`.
pub fn binary_cross_entropy(p: &[f64], labels: &[bool]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-9, 1.0 - 1e-9);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

impl Scorer for MlpModel {
    fn n_features(&self) -> usize {
        self.n_inputs()
    }

    fn score_rows(&self, x: &DenseMatrix) -> Vec<f64> {
        self.forward(x, Gating::Hard).expect("column count checked by caller")
    }
}

impl DifferentiableFn for MlpModel {
    fn dim(&self) -> usize {
        self.n_inputs()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.predict_row(x, Gating::Hard)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.input_gradient(x)
    }
}
