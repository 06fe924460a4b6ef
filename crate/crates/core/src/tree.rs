//! Interval decomposition tree used by the hierarchical protocol.
//!
//! Nodes live in an arena; layer `t` lists the nodes at depth `t` in left to
//! right order. A node whose only child carries the same interval is an
//! unsplit node carried into the next layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::Interval;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub interval: Interval,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Layer estimate after Norm-Sub, before consistency.
    pub f_hat: f64,
    /// Estimate after consistency.
    pub f_tilde: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTree {
    nodes: Vec<TreeNode>,
    layers: Vec<Vec<NodeId>>,
    domain: usize,
}

impl DecompositionTree {
    /// A tree holding only the root `[0, domain)` with frequency 1.
    pub fn new(domain: usize) -> Self {
        let root = TreeNode {
            interval: Interval::new(0, domain),
            depth: 0,
            parent: None,
            children: Vec::new(),
            f_hat: 1.0,
            f_tilde: 1.0,
        };
        DecompositionTree { nodes: vec![root], layers: vec![vec![0]], domain }
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut TreeNode {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    pub fn layer(&self, depth: usize) -> &[NodeId] {
        &self.layers[depth]
    }

    pub fn height(&self) -> usize {
        self.layers.len() - 1
    }

    /// Append a new deepest layer. `split[i]` gives the children intervals of
    /// the `i`-th node of the current deepest layer; a single interval equal
    /// to the parent's carries the node forward unsplit.
    pub fn grow_layer(&mut self, split: &[Vec<Interval>]) -> Result<&[NodeId]> {
        let last = self.layers.len() - 1;
        if split.len() != self.layers[last].len() {
            return Err(Error::LengthMismatch {
                expected: self.layers[last].len(),
                found: split.len(),
            });
        }
        let parents = self.layers[last].clone();
        let mut layer = Vec::new();
        for (parent, kids) in parents.into_iter().zip(split) {
            let piv = self.nodes[parent].interval;
            let mut covered = 0;
            for iv in kids {
                if !iv.is_subset_of(&piv) || iv.is_empty() {
                    return Err(Error::param(format!(
                        "child [{}, {}) not inside parent [{}, {})",
                        iv.lo, iv.hi, piv.lo, piv.hi
                    )));
                }
                covered += iv.len();
            }
            if covered != piv.len() {
                return Err(Error::param("children must partition their parent"));
            }
            for iv in kids {
                let id = self.nodes.len();
                self.nodes.push(TreeNode {
                    interval: *iv,
                    depth: last + 1,
                    parent: Some(parent),
                    children: Vec::new(),
                    f_hat: 0.0,
                    f_tilde: 0.0,
                });
                self.nodes[parent].children.push(id);
                layer.push(id);
            }
        }
        self.layers.push(layer);
        Ok(&self.layers[last + 1])
    }

    /// Full `fanout`-ary tree of the given height over `[0, domain)`.
    pub fn complete(domain: usize, fanout: usize, height: usize) -> Result<Self> {
        let mut t = DecompositionTree::new(domain);
        for _ in 0..height {
            let split: Vec<Vec<Interval>> = t
                .layers
                .last()
                .expect("root layer")
                .iter()
                .map(|&id| split_interval(t.nodes[id].interval, fanout))
                .collect();
            t.grow_layer(&split)?;
        }
        Ok(t)
    }

    /// Drop the deepest layer (used by attack foresight on cloned trees).
    pub fn truncate_to(&mut self, height: usize) {
        while self.layers.len() > height + 1 {
            let layer = self.layers.pop().expect("non-root layer");
            for id in &layer {
                if let Some(p) = self.nodes[*id].parent {
                    self.nodes[p].children.clear();
                }
            }
            let keep = self.nodes.len() - layer.len();
            self.nodes.truncate(keep);
        }
    }
}

/// Split `iv` into `fanout` equal parts, or carry it forward when it is a
/// unit interval or does not divide evenly.
pub fn split_interval(iv: Interval, fanout: usize) -> Vec<Interval> {
    let len = iv.len();
    if len < fanout || len % fanout != 0 {
        return vec![iv];
    }
    let w = len / fanout;
    (0..fanout).map(|k| Interval::new(iv.lo + k * w, iv.lo + (k + 1) * w)).collect()
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    interval: [usize; 2],
    f_hat: f64,
    f_tilde: f64,
    children: Vec<NodeJson>,
}

impl DecompositionTree {
    fn to_json_node(&self, id: NodeId) -> NodeJson {
        let n = &self.nodes[id];
        NodeJson {
            interval: [n.interval.lo, n.interval.hi],
            f_hat: n.f_hat,
            f_tilde: n.f_tilde,
            children: n.children.iter().map(|c| self.to_json_node(*c)).collect(),
        }
    }

    /// Nested `{interval, f_hat, f_tilde, children}` JSON.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_json_node(self.root())).expect("plain data")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let root: NodeJson =
            serde_json::from_value(value.clone()).map_err(|e| Error::Serde(e.to_string()))?;
        let domain = root.interval[1];
        if root.interval[0] != 0 {
            return Err(Error::Serde("root interval must start at 0".into()));
        }
        let mut tree = DecompositionTree::new(domain);
        tree.nodes[0].f_hat = root.f_hat;
        tree.nodes[0].f_tilde = root.f_tilde;
        let mut frontier = vec![(0usize, &root)];
        while frontier.iter().any(|(_, j)| !j.children.is_empty()) {
            let mut split = Vec::new();
            for (_, j) in &frontier {
                if j.children.is_empty() {
                    return Err(Error::Serde("leaves must all sit in the deepest layer".into()));
                }
                split.push(
                    j.children
                        .iter()
                        .map(|c| Interval::new(c.interval[0], c.interval[1]))
                        .collect::<Vec<_>>(),
                );
            }
            let ids = tree.grow_layer(&split)?.to_vec();
            let kids: Vec<&NodeJson> = frontier.iter().flat_map(|(_, j)| j.children.iter()).collect();
            for (id, j) in ids.iter().zip(&kids) {
                tree.nodes[*id].f_hat = j.f_hat;
                tree.nodes[*id].f_tilde = j.f_tilde;
            }
            frontier = ids.into_iter().zip(kids).collect();
        }
        Ok(tree)
    }
}
