use std::collections::BTreeSet;

use super::{CompGraph, Cut, GraphError, OpSpec, Result, Side, Vertex, VertexId, VertexKind};

/// Realizes a binary input mask inside the graph.
///
/// Each input gets a gate vertex: `Affine([1], 0)` for selected inputs and
/// `Affine([0], 0)` for the rest. Consumers read the gate instead of the
/// input. A zero-valued (unselected) gate is folded out of its affine or sum
/// consumers, which drops the edge without changing any value, so unselected
/// gates carry no edge into `T`. The returned cut has `S` = inputs ∪ gates,
/// hence the boundary is exactly the selected gates.
///
/// A consumer that would lose every argument keeps one zero-weight edge from
/// an unselected gate; that gate then appears on the boundary with value 0.
/// This only happens when a consumer reads no selected input at all.
///
/// Gate vertices are appended after the original vertices, so input ids and
/// input ordering are unchanged.
pub fn mask_cut(graph: &CompGraph, selected: &BTreeSet<VertexId>) -> Result<(CompGraph, Cut)> {
    for &v in selected {
        if v >= graph.len() || graph.kind(v) != VertexKind::Input {
            return Err(GraphError::InvalidSelection(v));
        }
    }

    let n = graph.len();
    let mut vertices: Vec<Vertex> = graph.vertices().to_vec();
    let mut incoming: Vec<Vec<VertexId>> = (0..n).map(|v| graph.args(v).to_vec()).collect();
    let mut ops: Vec<Option<OpSpec>> = (0..n).map(|v| graph.op(v).cloned()).collect();

    let mut gate_of = vec![usize::MAX; n];
    for &x in graph.inputs() {
        let gate = vertices.len();
        let on = selected.contains(&x);
        vertices.push(Vertex {
            kind: VertexKind::Internal,
            label: format!("gate:{}", graph.vertex(x).label),
        });
        incoming.push(vec![x]);
        ops.push(Some(OpSpec::affine(vec![if on { 1.0 } else { 0.0 }], 0.0)));
        gate_of[x] = gate;
    }

    for v in 0..n {
        let reads_input = graph.args(v).iter().any(|&a| graph.kind(a) == VertexKind::Input);
        if !reads_input {
            continue;
        }
        let op = ops[v].take().expect("non-input vertex carries an op");
        let (new_args, new_op) = rewire(v, graph.args(v), op, graph, selected, &gate_of)?;
        incoming[v] = new_args;
        ops[v] = Some(new_op);
    }

    let masked = CompGraph::from_parts(vertices, incoming, ops)?;
    let side = (0..masked.len())
        .map(|v| {
            if v >= n || masked.kind(v) == VertexKind::Input {
                Side::S
            } else {
                Side::T
            }
        })
        .collect();
    let cut = Cut::new(&masked, side)?;
    Ok((masked, cut))
}

fn rewire(
    v: VertexId,
    args: &[VertexId],
    op: OpSpec,
    graph: &CompGraph,
    selected: &BTreeSet<VertexId>,
    gate_of: &[VertexId],
) -> Result<(Vec<VertexId>, OpSpec)> {
    let is_dropped = |a: VertexId| graph.kind(a) == VertexKind::Input && !selected.contains(&a);
    let route = |a: VertexId| {
        if graph.kind(a) == VertexKind::Input {
            gate_of[a]
        } else {
            a
        }
    };
    let first_dropped = args.iter().copied().find(|&a| is_dropped(a));

    match op {
        OpSpec::Affine { coefficients, bias } => {
            let mut kept_args = Vec::new();
            let mut kept_coef = Vec::new();
            for (&a, &c) in args.iter().zip(&coefficients) {
                if !is_dropped(a) {
                    kept_args.push(route(a));
                    kept_coef.push(c);
                }
            }
            if kept_args.is_empty() {
                let a = first_dropped.expect("all arguments were dropped");
                kept_args.push(gate_of[a]);
                kept_coef.push(0.0);
            }
            Ok((kept_args, OpSpec::affine(kept_coef, bias)))
        }
        OpSpec::Sum => {
            let mut kept: Vec<VertexId> = args.iter().copied().filter(|&a| !is_dropped(a)).map(route).collect();
            if kept.is_empty() {
                kept.push(gate_of[first_dropped.expect("all arguments were dropped")]);
            }
            Ok((kept, OpSpec::Sum))
        }
        other => {
            if first_dropped.is_some() {
                return Err(GraphError::UnsupportedConsumer {
                    vertex: v,
                    op: other.name(),
                });
            }
            // Selected inputs pass through an identity gate, so any op works.
            Ok((args.iter().copied().map(route).collect(), other))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{boundary, explain, replay, GraphBuilder};
    use super::*;

    fn linear_model() -> CompGraph {
        let mut b = GraphBuilder::new();
        let xs: Vec<_> = (0..3).map(|i| b.input(format!("x{i}"))).collect();
        let h = b.internal("h", OpSpec::affine(vec![0.5, -2.0, 1.5], 0.1), &xs);
        let z = b.internal("z", OpSpec::Tanh, &[h]);
        b.output("p", OpSpec::Sigmoid, &[z]);
        b.build().unwrap()
    }

    #[test]
    fn boundary_is_selected_gates() {
        let g = linear_model();
        let (m, cut) = mask_cut(&g, &[0, 2].into_iter().collect()).unwrap();
        let b: Vec<_> = boundary(&m, &cut).unwrap().into_iter().collect();
        let labels: Vec<_> = b.iter().map(|&v| m.vertex(v).label.as_str()).collect();
        assert_eq!(labels, vec!["gate:x0", "gate:x2"]);
        let e = explain(&m, &cut, &[0.3, 9.0, -0.4]).unwrap();
        assert_eq!(e.entries.iter().map(|e| e.1).collect::<Vec<_>>(), vec![0.3, -0.4]);
        assert_eq!(
            replay(&m, &cut, &e).unwrap(),
            m.evaluate(&[0.3, 9.0, -0.4]).unwrap().output
        );
    }

    #[test]
    fn all_selected_preserves_outputs() {
        let g = linear_model();
        let (m, _) = mask_cut(&g, &[0, 1, 2].into_iter().collect()).unwrap();
        let x = [0.2, -0.7, 1.1];
        assert_eq!(m.evaluate(&x).unwrap().output, g.evaluate(&x).unwrap().output);
    }

    #[test]
    fn none_selected_is_constant() {
        let g = linear_model();
        let (m, cut) = mask_cut(&g, &BTreeSet::new()).unwrap();
        let a = m.evaluate(&[0.0, 0.0, 0.0]).unwrap().output;
        let b = m.evaluate(&[5.0, -3.0, 2.0]).unwrap().output;
        assert_eq!(a, b);
        let e = explain(&m, &cut, &[5.0, -3.0, 2.0]).unwrap();
        assert!(e.entries.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn rejects_non_inputs_and_nonlinear_consumers() {
        let g = linear_model();
        assert!(matches!(
            mask_cut(&g, &[3].into_iter().collect()),
            Err(GraphError::InvalidSelection(3))
        ));
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let y = b.input("y");
        b.output("t", OpSpec::Product, &[x, y]);
        let g = b.build().unwrap();
        assert!(matches!(
            mask_cut(&g, &[0].into_iter().collect()),
            Err(GraphError::UnsupportedConsumer { .. })
        ));
        assert!(mask_cut(&g, &[0, 1].into_iter().collect()).is_ok());
    }
}
