use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gating, MlpModel, NeuralError, Result};
use crate::compgraph::{mask_cut, CompGraph, Cut, GraphBuilder, OpSpec};

pub const MODEL_FORMAT: &str = "soundex.mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    model: MlpModel,
}

pub fn write_model(path: &Path, model: &MlpModel) -> Result<()> {
    let doc = ModelDocument {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path)?;
    let doc: ModelDocument = serde_json::from_str(&text)?;
    if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
        return Err(NeuralError::Config(format!(
            "unsupported model file {} v{}",
            doc.format, doc.version
        )));
    }
    let m = doc.model;
    let mut expected_in = m.config.n_inputs;
    let mut n_weights = 0;
    for l in &m.layers {
        if l.n_in != expected_in || l.w.len() != l.n_in * l.n_out || l.b.len() != l.n_out {
            return Err(NeuralError::Config("inconsistent layer shapes".into()));
        }
        expected_in = l.n_out;
        n_weights += l.w.len();
    }
    if expected_in != 1
        || m.weight_gates.len() != n_weights
        || m.input_mask.len() != m.config.n_inputs
        || m.input_scale.len() != m.config.n_inputs
    {
        return Err(NeuralError::Config("inconsistent gate or scale lengths".into()));
    }
    Ok(m)
}

/// The hard-gated network as a computational graph, with input gates for
/// `selected` realised by [`mask_cut`].
///
/// Inputs are vertices `0..n`. Input scaling and the hard input mask are
/// folded into the first-layer coefficients, so the graph output equals the
/// hard-gated forward pass on the input with unselected columns zeroed.
pub fn to_compgraph(model: &MlpModel, selected: &BTreeSet<usize>) -> Result<(CompGraph, Cut)> {
    let eff = model.effective_weights(Gating::Hard);
    let mut b = GraphBuilder::new();
    let mut prev: Vec<usize> = (0..model.n_inputs()).map(|i| b.input(format!("x{i}"))).collect();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let mut units = Vec::with_capacity(layer.n_out);
        for o in 0..layer.n_out {
            let coefficients: Vec<f64> = (0..layer.n_in)
                .map(|i| {
                    let w = eff[l][i * layer.n_out + o];
                    if l == 0 {
                        w * model.input_factor(i, Gating::Hard)
                    } else {
                        w
                    }
                })
                .collect();
            let op = OpSpec::Affine {
                coefficients,
                bias: layer.b[o],
            };
            if l == last {
                let logit = b.internal("logit", op, &prev);
                units.push(b.output("p", OpSpec::Sigmoid, &[logit]));
            } else {
                let pre = b.internal(format!("h{}.{o}.pre", l + 1), op, &prev);
                units.push(b.internal(format!("h{}.{o}", l + 1), OpSpec::Tanh, &[pre]));
            }
        }
        prev = units;
    }
    let graph = b.build()?;
    Ok(mask_cut(&graph, selected)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compgraph::{explain, replay};
    use crate::matrix::DenseMatrix;
    use crate::neural::MlpConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> MlpModel {
        let mut m = MlpModel::new(MlpConfig::new(6, 12).with_hidden(&[7, 5])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        m.input_scale = (0..6).map(|_| rng.random_range(0.5..2.0)).collect();
        m.input_mask.theta[4] = -1.0;
        m.weight_gates.theta[3] = -0.2;
        for l in &mut m.layers {
            l.b.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
        m
    }

    #[test]
    fn graph_reproduces_forward() {
        let m = model();
        let all: BTreeSet<usize> = (0..6).collect();
        let (g, cut) = to_compgraph(&m, &all).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = m.predict_row(&x, Gating::Hard);
            let ev = g.evaluate(&x).unwrap();
            assert!((ev.output - p).abs() <= 1e-9);
            let e = explain(&g, &cut, &x).unwrap();
            assert_eq!(replay(&g, &cut, &e).unwrap(), ev.output);
        }
    }

    #[test]
    fn unselected_inputs_are_inert() {
        let m = model();
        let selected = BTreeSet::from([0, 2, 5]);
        let (g, _) = to_compgraph(&m, &selected).unwrap();
        let x = [0.3, -1.0, 2.0, 0.7, 1.1, -0.4];
        let mut zeroed = x;
        for i in [1, 3, 4] {
            zeroed[i] = 0.0;
        }
        let reference = m
            .forward(&DenseMatrix::from_rows(&[zeroed.to_vec()]).unwrap(), Gating::Hard)
            .unwrap()[0];
        let out = g.evaluate(&x).unwrap().output;
        assert!((out - reference).abs() <= 1e-9);
        let mut moved = x;
        moved[1] = 1e4;
        moved[3] = -7.0;
        assert_eq!(g.evaluate(&moved).unwrap().output, out);
    }

    #[test]
    fn model_file_round_trip() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_model(&path, &m).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back, m);
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0, -2.0, 0.5, 3.0, 0.25]]).unwrap();
        assert_eq!(
            back.forward(&x, Gating::Hard).unwrap(),
            m.forward(&x, Gating::Hard).unwrap()
        );
    }
}
