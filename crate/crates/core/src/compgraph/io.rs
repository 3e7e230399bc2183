use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompGraph, Cut, GraphError, OpSpec, Result, Side, Vertex, VertexId, VertexKind};

pub const GRAPH_FORMAT: &str = "soundex.compgraph";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: VertexId,
    pub kind: VertexKind,
    pub label: String,
}

/// On-disk form of a graph and, optionally, a cut.
///
/// `edges` lists `[source, target]` pairs grouped by target in argument
/// order, which is how argument order survives the round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub format: String,
    pub version: u32,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<[VertexId; 2]>,
    pub op_table: BTreeMap<VertexId, OpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut: Option<BTreeMap<VertexId, Side>>,
}

impl GraphDocument {
    pub fn new(graph: &CompGraph, cut: Option<&Cut>) -> Self {
        GraphDocument {
            format: GRAPH_FORMAT.to_string(),
            version: GRAPH_VERSION,
            vertices: graph
                .vertices()
                .iter()
                .enumerate()
                .map(|(id, v)| VertexRecord {
                    id,
                    kind: v.kind,
                    label: v.label.clone(),
                })
                .collect(),
            edges: graph.edges().map(|(a, b)| [a, b]).collect(),
            op_table: (0..graph.len())
                .filter_map(|v| graph.op(v).map(|op| (v, op.clone())))
                .collect(),
            cut: cut.map(|c| c.sides().iter().copied().enumerate().collect()),
        }
    }

    pub fn into_parts(self) -> Result<(CompGraph, Option<Cut>)> {
        if self.format != GRAPH_FORMAT || self.version != GRAPH_VERSION {
            return Err(GraphError::UnsupportedDocument {
                format: self.format,
                version: self.version,
            });
        }
        let n = self.vertices.len();
        let mut vertices = Vec::with_capacity(n);
        for (position, rec) in self.vertices.into_iter().enumerate() {
            if rec.id != position {
                return Err(GraphError::NonContiguousIds {
                    position,
                    found: rec.id,
                });
            }
            vertices.push(Vertex {
                kind: rec.kind,
                label: rec.label,
            });
        }
        let mut incoming = vec![Vec::new(); n];
        for [a, b] in self.edges {
            if b >= n {
                return Err(GraphError::UnknownVertex(b));
            }
            incoming[b].push(a);
        }
        let mut ops = vec![None; n];
        for (v, op) in self.op_table {
            if v >= n {
                return Err(GraphError::UnknownVertex(v));
            }
            if vertices[v].kind == VertexKind::Input {
                return Err(GraphError::InputWithOp(v));
            }
            ops[v] = Some(op);
        }
        let graph = CompGraph::from_parts(vertices, incoming, ops)?;
        let cut = match self.cut {
            None => None,
            Some(map) => {
                if let Some((&v, _)) = map.iter().find(|(&v, _)| v >= n) {
                    return Err(GraphError::UnknownVertex(v));
                }
                // Missing vertices leave the side vector short, which the
                // partition clause reports.
                let side: Vec<Side> = (0..n).map_while(|v| map.get(&v).copied()).collect();
                Some(Cut::new(&graph, side)?)
            }
        };
        Ok((graph, cut))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_graph(path: &Path, graph: &CompGraph, cut: Option<&Cut>) -> Result<()> {
    let mut text = GraphDocument::new(graph, cut).to_json()?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<(CompGraph, Option<Cut>)> {
    let text = fs::read_to_string(path)?;
    GraphDocument::from_json(&text)?.into_parts()
}

#[cfg(test)]
mod tests {
    use super::super::{tree_to_graph, DecisionTree, GraphBuilder, TreeNode};
    use super::*;

    #[test]
    fn round_trip_preserves_argument_order_and_cut() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let y = b.input("y");
        let a = b.internal("a", OpSpec::affine(vec![0.1, -1.0 / 3.0], 1e-17), &[y, x]);
        b.output("t", OpSpec::Max, &[a, x]);
        let g = b.build().unwrap();
        let cut = Cut::trivial(&g);

        let doc = GraphDocument::new(&g, Some(&cut));
        let back = GraphDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
        let (g2, cut2) = back.into_parts().unwrap();
        assert_eq!(cut2.unwrap(), cut);
        assert_eq!(g2.args(a), &[y, x]);
        let input = [0.25, -7.5];
        assert_eq!(g2.evaluate(&input).unwrap(), g.evaluate(&input).unwrap());
    }

    #[test]
    fn tree_graph_round_trip() {
        let tree = DecisionTree::new(
            vec![
                TreeNode::Split {
                    feature: 1,
                    threshold: -0.25,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { value: 2.0 },
                TreeNode::Leaf { value: -1.0 },
            ],
            0,
            2,
        )
        .unwrap();
        let conv = tree_to_graph(&tree).unwrap();
        let json = GraphDocument::new(&conv.graph, Some(&conv.cut)).to_json().unwrap();
        let (g, cut) = GraphDocument::from_json(&json).unwrap().into_parts().unwrap();
        assert_eq!(cut.unwrap(), conv.cut);
        assert_eq!(g.evaluate(&[0.0, 1.0]).unwrap().output, -1.0);
    }

    #[test]
    fn rejects_unknown_version_and_bad_cut() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        b.output("t", OpSpec::Tanh, &[x]);
        let g = b.build().unwrap();
        let mut doc = GraphDocument::new(&g, None);
        doc.version = 99;
        assert!(matches!(doc.into_parts(), Err(GraphError::UnsupportedDocument { .. })));

        let mut doc = GraphDocument::new(&g, None);
        doc.cut = Some([(0, Side::T), (1, Side::T)].into_iter().collect());
        assert!(matches!(doc.into_parts(), Err(GraphError::InvalidCut(_))));
    }
}
