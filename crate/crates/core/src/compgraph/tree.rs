use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{CompGraph, Cut, Direction, GraphBuilder, GraphError, OpSpec, Result, VertexId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Go left when `x[feature] <= threshold`, right otherwise.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A binary decision tree over `n_features` real inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
    root: usize,
    n_features: usize,
}

impl DecisionTree {
    /// Checks that every node is reachable from `root` exactly once (so the
    /// structure is a proper binary tree) and feature indices are in range.
    pub fn new(nodes: Vec<TreeNode>, root: usize, n_features: usize) -> Result<Self> {
        let invalid = |msg: String| Err(GraphError::InvalidTree(msg));
        if n_features == 0 {
            return invalid("tree needs at least one input feature".into());
        }
        if root >= nodes.len() {
            return invalid(format!("root {root} out of range"));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if seen[i] {
                return invalid(format!("node {i} is reachable along more than one path"));
            }
            seen[i] = true;
            match nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features {
                        return invalid(format!("node {i} splits on feature {feature} of {n_features}"));
                    }
                    if !threshold.is_finite() {
                        return invalid(format!("node {i} has a non-finite threshold"));
                    }
                    for child in [left, right] {
                        if child >= nodes.len() {
                            return invalid(format!("node {i} has child {child} out of range"));
                        }
                        stack.push(child);
                    }
                }
                TreeNode::Leaf { value } => {
                    if !value.is_finite() {
                        return invalid(format!("leaf {i} has a non-finite value"));
                    }
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return invalid(format!("node {i} is unreachable from the root"));
        }
        Ok(DecisionTree {
            nodes,
            root,
            n_features,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Index of the leaf reached by recursive descent.
    pub fn leaf_for(&self, x: &[f64]) -> usize {
        let mut i = self.root;
        loop {
            match self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_for(x)] {
            TreeNode::Leaf { value } => value,
            TreeNode::Split { .. } => unreachable!(),
        }
    }
}

/// A tree rendered as a computational graph.
#[derive(Debug, Clone)]
pub struct ConvertedTree {
    pub graph: CompGraph,
    /// `(V \ {t}, {t})`; its boundary is the set of leaf vertices.
    pub cut: Cut,
    /// Graph vertex for each tree node, indexed by node.
    pub node_vertex: Vec<VertexId>,
}

/// One vertex per tree node whose value is 1 when the node is activated by
/// the input and 0 otherwise. The root is always active; a child is active
/// when its parent is and the parent's comparison routes to it. The output
/// vertex sums leaf activations weighted by leaf values.
pub fn tree_to_graph(tree: &DecisionTree) -> Result<ConvertedTree> {
    let mut b = GraphBuilder::new();
    let inputs: Vec<VertexId> = (0..tree.n_features).map(|i| b.input(format!("x{i}"))).collect();
    let mut node_vertex = vec![usize::MAX; tree.nodes.len()];

    // The root reads its own split feature (or x0 for a lone leaf) with a
    // zero coefficient: constant 1 without a constant vertex.
    let root_feature = match tree.nodes[tree.root] {
        TreeNode::Split { feature, .. } => feature,
        TreeNode::Leaf { .. } => 0,
    };
    node_vertex[tree.root] = b.internal(
        format!("node{}", tree.root),
        OpSpec::affine(vec![0.0], 1.0),
        &[inputs[root_feature]],
    );

    let mut leaves = Vec::new();
    let mut queue = VecDeque::from([tree.root]);
    while let Some(i) = queue.pop_front() {
        match tree.nodes[i] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                for (child, direction) in [(left, Direction::AtMost), (right, Direction::Above)] {
                    node_vertex[child] = b.internal(
                        format!("node{child}"),
                        OpSpec::Threshold {
                            constant: threshold,
                            direction,
                        },
                        &[node_vertex[i], inputs[feature]],
                    );
                    queue.push_back(child);
                }
            }
            TreeNode::Leaf { value } => leaves.push((i, value)),
        }
    }
    leaves.sort_by_key(|&(i, _)| i);
    let leaf_vertices: Vec<VertexId> = leaves.iter().map(|&(i, _)| node_vertex[i]).collect();
    b.output(
        "t",
        OpSpec::affine(leaves.iter().map(|&(_, v)| v).collect(), 0.0),
        &leaf_vertices,
    );
    let graph = b.build()?;
    let cut = Cut::trivial(&graph);
    Ok(ConvertedTree {
        graph,
        cut,
        node_vertex,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{boundary, explain, replay};
    use super::*;

    fn stump() -> DecisionTree {
        DecisionTree::new(
            vec![
                TreeNode::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { value: 0.0 },
                TreeNode::Leaf { value: 1.0 },
            ],
            0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn stump_activates_one_leaf() {
        let tree = stump();
        let conv = tree_to_graph(&tree).unwrap();
        let leaf_a = conv.node_vertex[1];
        let leaf_b = conv.node_vertex[2];

        let e = explain(&conv.graph, &conv.cut, &[0.3]).unwrap();
        assert_eq!(e.value(leaf_a), Some(1.0));
        assert_eq!(e.value(leaf_b), Some(0.0));
        assert_eq!(conv.graph.evaluate(&[0.3]).unwrap().output, 0.0);

        let e = explain(&conv.graph, &conv.cut, &[0.9]).unwrap();
        assert_eq!(e.value(leaf_a), Some(0.0));
        assert_eq!(e.value(leaf_b), Some(1.0));
        assert_eq!(replay(&conv.graph, &conv.cut, &e).unwrap(), 1.0);
    }

    #[test]
    fn boundary_is_the_leaves() {
        let conv = tree_to_graph(&stump()).unwrap();
        let b: Vec<_> = boundary(&conv.graph, &conv.cut).unwrap().into_iter().collect();
        assert_eq!(b, vec![conv.node_vertex[1], conv.node_vertex[2]]);
    }

    #[test]
    fn lone_leaf_tree() {
        let tree = DecisionTree::new(vec![TreeNode::Leaf { value: 3.5 }], 0, 2).unwrap();
        let conv = tree_to_graph(&tree).unwrap();
        assert_eq!(conv.graph.evaluate(&[1.0, -4.0]).unwrap().output, 3.5);
    }

    #[test]
    fn malformed_trees() {
        let shared = vec![
            TreeNode::Split {
                feature: 0,
                threshold: 0.0,
                left: 1,
                right: 1,
            },
            TreeNode::Leaf { value: 0.0 },
        ];
        assert!(DecisionTree::new(shared, 0, 1).is_err());
        let bad_feature = vec![
            TreeNode::Split {
                feature: 3,
                threshold: 0.0,
                left: 1,
                right: 2,
            },
            TreeNode::Leaf { value: 0.0 },
            TreeNode::Leaf { value: 1.0 },
        ];
        assert!(DecisionTree::new(bad_feature, 0, 2).is_err());
        let orphan = vec![TreeNode::Leaf { value: 0.0 }, TreeNode::Leaf { value: 1.0 }];
        assert!(DecisionTree::new(orphan, 0, 1).is_err());
        let cyclic = vec![
            TreeNode::Split {
                feature: 0,
                threshold: 0.0,
                left: 0,
                right: 1,
            },
            TreeNode::Leaf { value: 0.0 },
        ];
        assert!(DecisionTree::new(cyclic, 0, 1).is_err());
    }
}
