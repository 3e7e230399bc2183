use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CompGraph, GraphError, Result, VertexId, VertexKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    S,
    T,
}

/// The clause of the cut definition a candidate cut violates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CutClause {
    /// The side map does not assign exactly one side to every vertex.
    NotAPartition { expected: usize, got: usize },
    /// An input vertex was placed on the sink side.
    InputNotInSource(VertexId),
    /// The output vertex was placed on the source side.
    OutputNotInSink(VertexId),
}

impl fmt::Display for CutClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutClause::NotAPartition { expected, got } => write!(
                f,
                "S and T must partition V ({expected} vertices, {got} sides assigned)"
            ),
            CutClause::InputNotInSource(v) => write!(f, "input vertex {v} must lie in S"),
            CutClause::OutputNotInSink(v) => write!(f, "output vertex {v} must lie in T"),
        }
    }
}

/// A two-way vertex partition `(S, T)` with every input in `S` and the
/// output in `T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cut {
    side: Vec<Side>,
}

impl Cut {
    /// Validates a side assignment (indexed by vertex id) against `graph`.
    pub fn new(graph: &CompGraph, side: Vec<Side>) -> Result<Self> {
        let cut = Cut { side };
        cut.validate(graph)?;
        Ok(cut)
    }

    /// `S = V \ {t}`, `T = {t}`.
    pub fn trivial(graph: &CompGraph) -> Self {
        let mut side = vec![Side::S; graph.len()];
        side[graph.output()] = Side::T;
        Cut { side }
    }

    /// Builds a cut whose source side is exactly `source`.
    pub fn from_source(graph: &CompGraph, source: &BTreeSet<VertexId>) -> Result<Self> {
        if let Some(&v) = source.iter().find(|&&v| v >= graph.len()) {
            return Err(GraphError::UnknownVertex(v));
        }
        let side = (0..graph.len())
            .map(|v| if source.contains(&v) { Side::S } else { Side::T })
            .collect();
        Cut::new(graph, side)
    }

    pub fn validate(&self, graph: &CompGraph) -> Result<()> {
        if self.side.len() != graph.len() {
            return Err(GraphError::InvalidCut(CutClause::NotAPartition {
                expected: graph.len(),
                got: self.side.len(),
            }));
        }
        for &v in graph.inputs() {
            if self.side[v] != Side::S {
                return Err(GraphError::InvalidCut(CutClause::InputNotInSource(v)));
            }
        }
        if self.side[graph.output()] != Side::T {
            return Err(GraphError::InvalidCut(CutClause::OutputNotInSink(graph.output())));
        }
        Ok(())
    }

    pub fn side(&self, v: VertexId) -> Side {
        self.side[v]
    }

    pub fn sides(&self) -> &[Side] {
        &self.side
    }
}

/// Vertex values presented to a human: one entry per boundary vertex,
/// sorted by vertex id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub entries: Vec<(VertexId, f64)>,
}

impl Explanation {
    pub fn value(&self, v: VertexId) -> Option<f64> {
        self.entries
            .binary_search_by_key(&v, |&(id, _)| id)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.entries.iter().map(|&(v, _)| v)
    }

    /// Copy with the entry for `v` removed.
    pub fn without(&self, v: VertexId) -> Explanation {
        Explanation {
            entries: self.entries.iter().copied().filter(|&(id, _)| id != v).collect(),
        }
    }
}

/// `{v ∈ S : ∃ v' ∈ T, (v, v') ∈ E}`.
pub fn boundary(graph: &CompGraph, cut: &Cut) -> Result<BTreeSet<VertexId>> {
    cut.validate(graph)?;
    Ok((0..graph.len())
        .filter(|&v| cut.side(v) == Side::S && graph.successors(v).iter().any(|&w| cut.side(w) == Side::T))
        .collect())
}

pub fn explain(graph: &CompGraph, cut: &Cut, input: &[f64]) -> Result<Explanation> {
    let bound = boundary(graph, cut)?;
    let ev = graph.evaluate(input)?;
    Ok(Explanation {
        entries: bound.into_iter().map(|v| (v, ev.values[v])).collect(),
    })
}

/// Recomputes the output from the explanation alone: boundary values are
/// read from `explanation`, every vertex in `T` is recomputed, and nothing
/// else in `S` is consulted.
pub fn replay(graph: &CompGraph, cut: &Cut, explanation: &Explanation) -> Result<f64> {
    let bound = boundary(graph, cut)?;
    let mut known: Vec<Option<f64>> = vec![None; graph.len()];
    for &(v, value) in &explanation.entries {
        if v >= graph.len() || !bound.contains(&v) {
            return Err(GraphError::UnexpectedEntry(v));
        }
        if known[v].is_some() {
            return Err(GraphError::DuplicateEntry(v));
        }
        known[v] = Some(value);
    }
    if let Some(&missing) = bound.iter().find(|&&v| known[v].is_none()) {
        return Err(GraphError::IncompleteExplanation(missing));
    }

    let mut args = Vec::new();
    for &v in graph.topological_order() {
        if cut.side(v) != Side::T {
            continue;
        }
        debug_assert_ne!(graph.kind(v), VertexKind::Input);
        let op = graph.op(v).expect("validated graph: non-input vertices carry ops");
        args.clear();
        for &a in graph.args(v) {
            // Every predecessor is either in T (already computed) or on the boundary.
            args.push(known[a].ok_or(GraphError::IncompleteExplanation(a))?);
        }
        let value = op.apply(&args);
        if value.is_nan() {
            return Err(GraphError::NotANumber { vertex: v });
        }
        known[v] = Some(value);
    }
    Ok(known[graph.output()].expect("output lies in T"))
}
