//! Index arithmetic for complete binary trees.
//!
//! Nodes use 1-based heap numbering: the root is `1` and the children of `t`
//! are `2t` (left) and `2t + 1` (right). Branching nodes are `1..2^D` and
//! leaves are `2^D..2^(D+1)`. Node `t` is stored at array offset `t - 1`.

use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 20;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The path continues through the left child (`s < 0`).
    Left,
    /// The path continues through the right child (`s >= 0`).
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeTopology {
    depth: usize,
}

impl TreeTopology {
    pub fn new(depth: usize) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::config(
                "depth",
                format!("depth {depth} exceeds the maximum of {MAX_DEPTH}"),
            ));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_nodes(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    pub fn num_branching(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn num_leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn nodes(&self) -> std::ops::RangeInclusive<NodeId> {
        1..=self.num_nodes()
    }

    pub fn branching_nodes(&self) -> std::ops::Range<NodeId> {
        1..(1 << self.depth)
    }

    pub fn leaves(&self) -> std::ops::RangeInclusive<NodeId> {
        (1 << self.depth)..=self.num_nodes()
    }

    pub fn contains(&self, t: NodeId) -> bool {
        t >= 1 && t <= self.num_nodes()
    }

    pub fn is_leaf(&self, t: NodeId) -> bool {
        t >= 1 << self.depth && t <= self.num_nodes()
    }

    pub fn parent(&self, t: NodeId) -> Option<NodeId> {
        (t > 1).then_some(t / 2)
    }

    pub fn children(&self, t: NodeId) -> Option<(NodeId, NodeId)> {
        (t >= 1 && t < 1 << self.depth).then_some((2 * t, 2 * t + 1))
    }

    /// Distance from the root.
    pub fn node_depth(t: NodeId) -> usize {
        debug_assert!(t >= 1);
        (usize::BITS - 1 - t.leading_zeros()) as usize
    }

    /// Whether `u` lies in the subtree rooted at `w` (including `w` itself).
    pub fn is_descendant(u: NodeId, w: NodeId) -> bool {
        let (du, dw) = (Self::node_depth(u), Self::node_depth(w));
        du >= dw && u >> (du - dw) == w
    }

    pub fn lowest_common_ancestor(mut u: NodeId, mut v: NodeId) -> NodeId {
        let (du, dv) = (Self::node_depth(u), Self::node_depth(v));
        if du > dv {
            u >>= du - dv;
        } else {
            v >>= dv - du;
        }
        while u != v {
            u >>= 1;
            v >>= 1;
        }
        u
    }

    /// Which child of its parent `t` is. `None` for the root.
    pub fn side_of(t: NodeId) -> Option<Side> {
        match t {
            0 | 1 => None,
            _ if t.is_multiple_of(2) => Some(Side::Left),
            _ => Some(Side::Right),
        }
    }

    /// Strict ancestors of `t` whose left (resp. right) child lies on the
    /// path to `t`, each in increasing id order.
    pub fn ancestor_sets(&self, t: NodeId) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        if !self.contains(t) {
            return Err(Error::Argument(format!(
                "node {t} is outside a tree with {} nodes",
                self.num_nodes()
            )));
        }
        let dt = Self::node_depth(t);
        let mut left = Vec::new();
        let mut right = Vec::new();
        for level in 0..dt {
            let ancestor = t >> (dt - level);
            let next = t >> (dt - level - 1);
            if next.is_multiple_of(2) {
                left.push(ancestor);
            } else {
                right.push(ancestor);
            }
        }
        Ok((left, right))
    }

    /// Leaf reached by hard routing: left when `s < 0`, right otherwise.
    /// `split` returns the split value of a branching node.
    pub fn route<F: FnMut(NodeId) -> f64>(&self, mut split: F) -> NodeId {
        let mut t = 1;
        while t < 1 << self.depth {
            t = if split(t) < 0.0 { 2 * t } else { 2 * t + 1 };
        }
        t
    }
}
