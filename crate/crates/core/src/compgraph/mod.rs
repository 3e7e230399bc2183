//! Computational graphs and sound explanations.
//!
//! A machine-learning system is a DAG whose input vertices hold the raw
//! input, whose single output vertex holds the prediction, and whose other
//! vertices each apply one primitive from the closed [`OpSpec`] set to their
//! predecessors (in declared argument order).
//!
//! A [`Cut`] splits the vertices into a source side `S` (holding every input)
//! and a sink side `T` (holding the output). The vertices of `S` with an edge
//! into `T` form the boundary, and their values on a given input form the
//! [`Explanation`]. [`replay`] recomputes the output from those values alone,
//! which is the machine-checkable content of soundness: the system uses no
//! information beyond what the explanation presents.

mod cut;
mod io;
mod mask;
mod ops;
mod tree;

use std::collections::VecDeque;

use thiserror::Error;

pub use cut::{boundary, explain, replay, Cut, CutClause, Explanation, Side};
pub use io::{read_graph, write_graph, GraphDocument, GRAPH_FORMAT, GRAPH_VERSION};
pub use mask::mask_cut;
pub use ops::{sigmoid, Direction, OpSpec, MAX_MUX_SELECTORS};
pub use tree::{tree_to_graph, ConvertedTree, DecisionTree, TreeNode};

pub type VertexId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Input,
    Internal,
    Output,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph contains a cycle")]
    Cycle,
    #[error("graph must have exactly one output vertex, found {0}")]
    OutputCount(usize),
    #[error("output vertex {0} has outgoing edges")]
    OutputHasSuccessors(VertexId),
    #[error("input vertex {0} has incoming edges")]
    InputHasPredecessors(VertexId),
    #[error("non-input vertex {0} has no incoming edges")]
    MissingPredecessors(VertexId),
    #[error("non-input vertex {0} has no op")]
    MissingOp(VertexId),
    #[error("input vertex {0} carries an op")]
    InputWithOp(VertexId),
    #[error("vertex {vertex}: {op} expects {rule} arguments, got {got}")]
    ArityMismatch {
        vertex: VertexId,
        op: &'static str,
        rule: String,
        got: usize,
    },
    #[error("unknown vertex id {0}")]
    UnknownVertex(VertexId),
    #[error("vertex ids must be 0..n in order, found {found} at position {position}")]
    NonContiguousIds { position: usize, found: VertexId },
    #[error("expected {expected} input values, got {got}")]
    InputArity { expected: usize, got: usize },
    #[error("vertex {vertex} produced NaN")]
    NotANumber { vertex: VertexId },
    #[error("invalid cut: {0}")]
    InvalidCut(CutClause),
    #[error("explanation is missing boundary vertex {0}")]
    IncompleteExplanation(VertexId),
    #[error("explanation entry for vertex {0} is not on the boundary")]
    UnexpectedEntry(VertexId),
    #[error("explanation lists vertex {0} more than once")]
    DuplicateEntry(VertexId),
    #[error("vertex {0} is not an input and cannot be selected")]
    InvalidSelection(VertexId),
    #[error("vertex {vertex} consumes an input through {op}; masking needs affine or sum consumers")]
    UnsupportedConsumer { vertex: VertexId, op: &'static str },
    #[error("invalid decision tree: {0}")]
    InvalidTree(String),
    #[error("unsupported graph document (format {format:?}, version {version})")]
    UnsupportedDocument { format: String, version: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub kind: VertexKind,
    pub label: String,
}

/// An immutable, validated computational graph.
#[derive(Debug, Clone)]
pub struct CompGraph {
    vertices: Vec<Vertex>,
    incoming: Vec<Vec<VertexId>>,
    ops: Vec<Option<OpSpec>>,
    outgoing: Vec<Vec<VertexId>>,
    order: Vec<VertexId>,
    inputs: Vec<VertexId>,
    output: VertexId,
}

/// Incremental constructor. Vertices may only reference vertices that already
/// exist, so builder-made graphs are acyclic by construction; [`build`]
/// still runs the full validation.
///
/// [`build`]: GraphBuilder::build
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    vertices: Vec<Vertex>,
    incoming: Vec<Vec<VertexId>>,
    ops: Vec<Option<OpSpec>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn input(&mut self, label: impl Into<String>) -> VertexId {
        self.push(VertexKind::Input, label.into(), Vec::new(), None)
    }

    pub fn internal(&mut self, label: impl Into<String>, op: OpSpec, args: &[VertexId]) -> VertexId {
        self.push(VertexKind::Internal, label.into(), args.to_vec(), Some(op))
    }

    pub fn output(&mut self, label: impl Into<String>, op: OpSpec, args: &[VertexId]) -> VertexId {
        self.push(VertexKind::Output, label.into(), args.to_vec(), Some(op))
    }

    fn push(&mut self, kind: VertexKind, label: String, args: Vec<VertexId>, op: Option<OpSpec>) -> VertexId {
        let id = self.vertices.len();
        self.vertices.push(Vertex { kind, label });
        self.incoming.push(args);
        self.ops.push(op);
        id
    }

    pub fn build(self) -> Result<CompGraph> {
        CompGraph::from_parts(self.vertices, self.incoming, self.ops)
    }
}

impl CompGraph {
    /// Validates raw parts and derives adjacency and a topological order.
    pub fn from_parts(vertices: Vec<Vertex>, incoming: Vec<Vec<VertexId>>, ops: Vec<Option<OpSpec>>) -> Result<Self> {
        let n = vertices.len();
        assert_eq!(incoming.len(), n);
        assert_eq!(ops.len(), n);

        let mut outgoing = vec![Vec::new(); n];
        for (v, args) in incoming.iter().enumerate() {
            for &a in args {
                if a >= n {
                    return Err(GraphError::UnknownVertex(a));
                }
                outgoing[a].push(v);
            }
        }

        let outputs: Vec<VertexId> = (0..n).filter(|&v| vertices[v].kind == VertexKind::Output).collect();
        if outputs.len() != 1 {
            return Err(GraphError::OutputCount(outputs.len()));
        }
        let output = outputs[0];
        if !outgoing[output].is_empty() {
            return Err(GraphError::OutputHasSuccessors(output));
        }

        for v in 0..n {
            match vertices[v].kind {
                VertexKind::Input => {
                    if !incoming[v].is_empty() {
                        return Err(GraphError::InputHasPredecessors(v));
                    }
                    if ops[v].is_some() {
                        return Err(GraphError::InputWithOp(v));
                    }
                }
                VertexKind::Internal | VertexKind::Output => {
                    if incoming[v].is_empty() {
                        return Err(GraphError::MissingPredecessors(v));
                    }
                    let op = ops[v].as_ref().ok_or(GraphError::MissingOp(v))?;
                    if !op.accepts_arity(incoming[v].len()) {
                        return Err(GraphError::ArityMismatch {
                            vertex: v,
                            op: op.name(),
                            rule: op.arity_rule(),
                            got: incoming[v].len(),
                        });
                    }
                }
            }
        }

        // Kahn's algorithm; repeated edges count once per occurrence.
        let mut pending: Vec<usize> = incoming.iter().map(Vec::len).collect();
        let mut queue: VecDeque<VertexId> = (0..n).filter(|&v| pending[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &outgoing[v] {
                pending[w] -= 1;
                if pending[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        if order.len() != n {
            return Err(GraphError::Cycle);
        }

        let inputs = (0..n).filter(|&v| vertices[v].kind == VertexKind::Input).collect();

        Ok(CompGraph {
            vertices,
            incoming,
            ops,
            outgoing,
            order,
            inputs,
            output,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn kind(&self, v: VertexId) -> VertexKind {
        self.vertices[v].kind
    }

    /// Predecessors of `v` in argument order.
    pub fn args(&self, v: VertexId) -> &[VertexId] {
        &self.incoming[v]
    }

    pub fn successors(&self, v: VertexId) -> &[VertexId] {
        &self.outgoing[v]
    }

    pub fn op(&self, v: VertexId) -> Option<&OpSpec> {
        self.ops[v].as_ref()
    }

    /// Input vertices in id order; this is the indexing of input vectors.
    pub fn inputs(&self) -> &[VertexId] {
        &self.inputs
    }

    pub fn output(&self) -> VertexId {
        self.output
    }

    pub fn topological_order(&self) -> &[VertexId] {
        &self.order
    }

    /// All edges as `(source, target)` pairs, grouped by target in argument order.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        self.incoming
            .iter()
            .enumerate()
            .flat_map(|(v, args)| args.iter().map(move |&a| (a, v)))
    }

    /// Computes every vertex value for `input` (indexed like [`inputs`]).
    ///
    /// [`inputs`]: CompGraph::inputs
    pub fn evaluate(&self, input: &[f64]) -> Result<Evaluation> {
        if input.len() != self.inputs.len() {
            return Err(GraphError::InputArity {
                expected: self.inputs.len(),
                got: input.len(),
            });
        }
        let mut values = vec![0.0; self.len()];
        for (&v, &x) in self.inputs.iter().zip(input) {
            if x.is_nan() {
                return Err(GraphError::NotANumber { vertex: v });
            }
            values[v] = x;
        }
        let mut args = Vec::new();
        for &v in &self.order {
            let Some(op) = &self.ops[v] else { continue };
            args.clear();
            args.extend(self.incoming[v].iter().map(|&a| values[a]));
            let value = op.apply(&args);
            if value.is_nan() {
                return Err(GraphError::NotANumber { vertex: v });
            }
            values[v] = value;
        }
        Ok(Evaluation {
            output: values[self.output],
            values,
        })
    }
}

/// Result of [`CompGraph::evaluate`]: the output and the value of every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub output: f64,
    pub values: Vec<f64>,
}
