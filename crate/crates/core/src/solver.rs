//! Exact solver for the relaxed traversal-and-pruning program
//!
//! ```text
//! min_{z, a}  λ/2 ‖a‖² + ½ Σ_i ‖z_i − q_i − ½‖²
//! s.t.        0 ≤ z_it ≤ a_t ≤ 1,   a_t ≤ a_parent(t)
//! ```
//!
//! Eliminating `z` (it is the clip of `q + ½` into `[0, a_t]`) leaves a
//! separable convex problem on `a` under tree-order constraints, which is
//! solved by pooling adjacent violators: every node starts in its own group,
//! and the group holding the largest value above its parent is repeatedly
//! merged into the parent's group. Each group value has a closed form once
//! the shifted rewards of its members are sorted in decreasing order.
//!
//! The backward pass only needs the node-to-group map and, per group, the
//! support set of entries that sit on the upper clipping bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeId, TreeTopology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub violation_tolerance: f64,
    pub interior_tolerance: f64,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        let config = Self {
            lambda,
            violation_tolerance: 1e-12,
            interior_tolerance: 1e-12,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(
                "lambda",
                format!("lambda must be a positive finite number, got {}", self.lambda),
            ));
        }
        if !(self.violation_tolerance >= 0.0) {
            return Err(Error::config("violation_tolerance", "must be non-negative"));
        }
        if !(self.interior_tolerance >= 0.0) {
            return Err(Error::config("interior_tolerance", "must be non-negative"));
        }
        Ok(())
    }
}

/// Solution of the one-dimensional pooled subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSolution {
    /// `a(k*)` before projection onto `[0, 1]`.
    pub unclipped: f64,
    /// `clip(a(k*), [0, 1])`.
    pub value: f64,
    pub k: usize,
    pub clipped: bool,
}

/// Scans `k = 0, 1, …` and stops at the first `k` with `a(k) > values[k]`,
/// where `a(k)` is the sum of the `k` largest values over `weight + k`.
/// Equality keeps scanning.
fn scan_pool<I: Iterator<Item = f64>>(values: I, weight: f64) -> ScalarSolution {
    let mut sum = 0.0;
    let mut k = 0usize;
    let mut values = values.peekable();
    loop {
        let a = sum / (weight + k as f64);
        match values.peek() {
            Some(&v) if !(a > v) => {
                sum += v;
                k += 1;
                values.next();
            }
            _ => {
                let value = a.clamp(0.0, 1.0);
                return ScalarSolution {
                    unclipped: a,
                    value,
                    k,
                    clipped: value != a,
                };
            }
        }
    }
}

/// Solves `min_a (λ|G|/2) a² + Σ_{v ≥ a} ½ (a − v)²` over `a ∈ [0, 1]`
/// given the shifted rewards `v = q + ½` of a group sorted in decreasing order.
pub fn scalar_subproblem(sorted: &[f64], group_size: usize, lambda: f64) -> Result<ScalarSolution> {
    if group_size == 0 {
        return Err(Error::Argument("group size must be at least 1".into()));
    }
    SolverConfig::new(lambda)?;
    if let Some(j) = sorted.windows(2).position(|w| w[0] < w[1] - 1e-12) {
        return Err(Error::Internal(format!(
            "group values are not sorted in decreasing order at position {j}: {} < {}",
            sorted[j],
            sorted[j + 1]
        )));
    }
    Ok(scan_pool(sorted.iter().copied(), lambda * group_size as f64))
}

/// One shifted reward `q_it + ½` tagged with its point and node.
#[derive(Debug, Clone, Copy)]
struct Entry {
    value: f64,
    point: u32,
    node: u32,
}

/// Decreasing value, then increasing node, then increasing point.
fn entry_order(a: &Entry, b: &Entry) -> Ordering {
    b.value
        .total_cmp(&a.value)
        .then(a.node.cmp(&b.node))
        .then(a.point.cmp(&b.point))
}

fn merge_sorted(left: Vec<Entry>, right: Vec<Entry>) -> Vec<Entry> {
    let mut out = Vec::with_capacity(left.len() + right.len());
    let (mut l, mut r) = (left.into_iter().peekable(), right.into_iter().peekable());
    loop {
        match (l.peek(), r.peek()) {
            (Some(x), Some(y)) => {
                if entry_order(x, y) != Ordering::Greater {
                    out.push(l.next().unwrap());
                } else {
                    out.push(r.next().unwrap());
                }
            }
            (Some(_), None) => out.extend(l.by_ref()),
            (None, Some(_)) => out.extend(r.by_ref()),
            (None, None) => break,
        }
    }
    out
}

struct Pool {
    /// Node of the group closest to the root.
    top: NodeId,
    nodes: Vec<NodeId>,
    entries: Vec<Entry>,
    scalar: ScalarSolution,
    version: u32,
}

impl Pool {
    fn resolve(&mut self, lambda: f64) {
        let weight = lambda * self.nodes.len() as f64;
        self.scalar = scan_pool(self.entries.iter().map(|e| e.value), weight);
    }
}

#[derive(Debug, Clone, Copy)]
struct Violator {
    value: f64,
    top: NodeId,
    version: u32,
}

impl PartialEq for Violator {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Violator {}
impl PartialOrd for Violator {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Violator {
    /// Largest value first; among equal values the smallest node id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(other.top.cmp(&self.top))
            .then(self.version.cmp(&other.version))
    }
}

/// A pooled group of nodes sharing one pruning value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledGroup {
    /// Member nodes in increasing id order.
    pub nodes: Vec<NodeId>,
    pub value: f64,
    pub unclipped: f64,
    pub clipped: bool,
    /// `(point, node)` pairs whose shifted reward is at or above the group
    /// value; its length is `k*`.
    pub support: Vec<(usize, NodeId)>,
}

impl PooledGroup {
    pub fn k_star(&self) -> usize {
        self.support.len()
    }
}

#[derive(Debug, Clone)]
pub struct TreeSolution {
    pub q: Array2<f64>,
    pub z: Array2<f64>,
    pub a: Array1<f64>,
    pub groups: Vec<PooledGroup>,
    /// Offset into `groups` for each node (offset `t - 1`). Empty when the
    /// solution carries no pooling bookkeeping.
    pub node_group: Vec<usize>,
    pub merges: usize,
    pub lambda: f64,
}

impl TreeSolution {
    /// Wraps a primal point that did not come from [`solve`]. It can be
    /// evaluated but not differentiated.
    pub fn from_primal(q: Array2<f64>, z: Array2<f64>, a: Array1<f64>, lambda: f64) -> Self {
        Self {
            q,
            z,
            a,
            groups: Vec::new(),
            node_group: Vec::new(),
            merges: 0,
            lambda,
        }
    }

    pub fn objective(&self) -> f64 {
        objective(self.q.view(), self.z.view(), self.a.view(), self.lambda)
    }

    pub fn group_of(&self, t: NodeId) -> Option<&PooledGroup> {
        self.node_group.get(t - 1).map(|&g| &self.groups[g])
    }

    /// Fraction of nodes with `a_t > 0`.
    pub fn active_fraction(&self) -> f64 {
        self.a.iter().filter(|&&v| v > 0.0).count() as f64 / self.a.len() as f64
    }

    pub fn dump(&self, depth: usize) -> SolutionDump {
        SolutionDump {
            depth,
            lambda: self.lambda,
            q: self.q.rows().into_iter().map(|r| r.to_vec()).collect(),
            a: self.a.to_vec(),
            z: self.z.rows().into_iter().map(|r| r.to_vec()).collect(),
            merges: self.merges,
            objective: self.objective(),
            groups: self.groups.clone(),
        }
    }
}

/// JSON debug dump of a solve call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionDump {
    pub depth: usize,
    pub lambda: f64,
    pub q: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub groups: Vec<PooledGroup>,
    pub merges: usize,
    pub objective: f64,
}

/// `λ/2 ‖a‖² + ½ Σ (z − q − ½)²`.
pub fn objective(q: ArrayView2<f64>, z: ArrayView2<f64>, a: ArrayView1<f64>, lambda: f64) -> f64 {
    let reg = 0.5 * lambda * a.iter().map(|v| v * v).sum::<f64>();
    let fit: f64 = z
        .iter()
        .zip(q.iter())
        .map(|(z, q)| {
            let d = z - q - 0.5;
            d * d
        })
        .sum();
    reg + 0.5 * fit
}

/// `z_it = clip(q_it + ½, [0, a_t])`.
pub fn project_traversals(q: ArrayView2<f64>, a: ArrayView1<f64>) -> Result<Array2<f64>> {
    if q.ncols() != a.len() {
        return Err(Error::Argument(format!(
            "reward matrix has {} columns but the pruning vector has {} entries",
            q.ncols(),
            a.len()
        )));
    }
    let mut z = q.to_owned();
    for mut row in z.rows_mut() {
        for (v, &cap) in row.iter_mut().zip(a.iter()) {
            *v = (*v + 0.5).max(0.0).min(cap);
        }
    }
    Ok(z)
}

pub fn solve(q: ArrayView2<f64>, config: &SolverConfig, topology: &TreeTopology) -> Result<TreeSolution> {
    config.validate()?;
    let m = topology.num_nodes();
    if q.ncols() != m {
        return Err(Error::Argument(format!(
            "reward matrix has {} columns, a depth-{} tree has {m} nodes",
            q.ncols(),
            topology.depth()
        )));
    }
    if let Some(((i, c), v)) = q.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("reward at point {i}, node {} is {v}", c + 1)));
    }
    let n = q.nrows();
    let lambda = config.lambda;

    let mut pools: Vec<Option<Pool>> = (1..=m)
        .map(|t| {
            let mut entries: Vec<Entry> = (0..n)
                .map(|i| Entry {
                    value: q[[i, t - 1]] + 0.5,
                    point: i as u32,
                    node: t as u32,
                })
                .collect();
            entries.sort_unstable_by(entry_order);
            let mut pool = Pool {
                top: t,
                nodes: vec![t],
                entries,
                scalar: scan_pool(std::iter::empty(), 1.0),
                version: 0,
            };
            pool.resolve(lambda);
            Some(pool)
        })
        .collect();
    // Pools are indexed by the id (minus one) of their top node.
    let mut owner: Vec<usize> = (0..m).collect();

    let value_of = |pools: &[Option<Pool>], g: usize| pools[g].as_ref().unwrap().scalar.value;
    let violator = |pools: &[Option<Pool>], owner: &[usize], g: usize| -> Option<Violator> {
        let pool = pools[g].as_ref().unwrap();
        let parent = topology.parent(pool.top)?;
        let above = value_of(pools, owner[parent - 1]);
        (pool.scalar.value > above + config.violation_tolerance).then_some(Violator {
            value: pool.scalar.value,
            top: pool.top,
            version: pool.version,
        })
    };

    let mut heap = BinaryHeap::new();
    for g in 1..m {
        if let Some(v) = violator(&pools, &owner, g) {
            heap.push(v);
        }
    }

    let mut merges = 0;
    while let Some(candidate) = heap.pop() {
        let g = candidate.top - 1;
        match pools[g].as_ref() {
            Some(pool) if pool.version == candidate.version => {}
            _ => continue,
        }
        if violator(&pools, &owner, g).is_none() {
            continue;
        }
        let child = pools[g].take().unwrap();
        let parent_group = owner[child.top / 2 - 1];
        for &t in &child.nodes {
            owner[t - 1] = parent_group;
        }
        {
            let parent = pools[parent_group].as_mut().unwrap();
            let entries = std::mem::take(&mut parent.entries);
            parent.entries = merge_sorted(entries, child.entries);
            parent.nodes.extend_from_slice(&child.nodes);
            parent.version += 1;
            parent.resolve(lambda);
        }
        merges += 1;
        if merges >= m {
            return Err(Error::Internal(format!(
                "pooling did not terminate within {} merges",
                m - 1
            )));
        }

        if let Some(v) = violator(&pools, &owner, parent_group) {
            heap.push(v);
        }
        // Only groups hanging below the absorbed nodes can start violating:
        // the merged value is never above the absorbed group's value.
        for &t in &child.nodes {
            if let Some((l, r)) = topology.children(t) {
                for c in [l, r] {
                    let cg = owner[c - 1];
                    if cg != parent_group {
                        if let Some(v) = violator(&pools, &owner, cg) {
                            heap.push(v);
                        }
                    }
                }
            }
        }
    }

    let mut groups = Vec::new();
    let mut slot_of_pool = vec![usize::MAX; m];
    let mut a = Array1::<f64>::zeros(m);
    for (g, pool) in pools.into_iter().enumerate() {
        let Some(mut pool) = pool else { continue };
        pool.nodes.sort_unstable();
        for &t in &pool.nodes {
            a[t - 1] = pool.scalar.value;
        }
        slot_of_pool[g] = groups.len();
        groups.push(PooledGroup {
            support: pool.entries[..pool.scalar.k]
                .iter()
                .map(|e| (e.point as usize, e.node as NodeId))
                .collect(),
            nodes: pool.nodes,
            value: pool.scalar.value,
            unclipped: pool.scalar.unclipped,
            clipped: pool.scalar.clipped,
        });
    }
    let node_group = owner.iter().map(|&g| slot_of_pool[g]).collect();
    let z = project_traversals(q, a.view())?;
    Ok(TreeSolution {
        q: q.to_owned(),
        z,
        a,
        groups,
        node_group,
        merges,
        lambda,
    })
}

/// Vector-Jacobian product of [`solve`]: given `dL/dz` and `dL/da`, returns
/// `dL/dq`.
///
/// A group's value moves with its support entries at rate `1 / (λ|G| + k*)`
/// when the value is strictly inside `(0, 1)`, and is locally constant
/// otherwise. `z_it` follows `q_it` when `0 < q_it + ½ < a_t` and follows
/// `a_t` when `q_it + ½ ≥ a_t > 0`.
pub fn backward(
    solution: &TreeSolution,
    grad_z: ArrayView2<f64>,
    grad_a: ArrayView1<f64>,
    config: &SolverConfig,
) -> Result<Array2<f64>> {
    let (n, m) = solution.q.dim();
    if solution.node_group.len() != m || solution.groups.is_empty() {
        return Err(Error::Usage(
            "solution has no pooling bookkeeping; differentiate the output of solve()".into(),
        ));
    }
    if grad_z.dim() != (n, m) {
        return Err(Error::Argument(format!(
            "traversal gradient has shape {:?}, expected {:?}",
            grad_z.dim(),
            (n, m)
        )));
    }
    if grad_a.len() != m {
        return Err(Error::Argument(format!(
            "pruning gradient has {} entries, expected {m}",
            grad_a.len()
        )));
    }
    let tol = config.interior_tolerance;
    let mut grad_q = Array2::<f64>::zeros((n, m));
    let mut through_a = grad_a.to_owned();
    for i in 0..n {
        for t in 0..m {
            let g = grad_z[[i, t]];
            if g == 0.0 {
                continue;
            }
            let v = solution.q[[i, t]] + 0.5;
            let cap = solution.a[t];
            if cap > 0.0 && v >= cap - tol {
                through_a[t] += g;
            } else if v > tol {
                grad_q[[i, t]] += g;
            }
        }
    }
    for group in &solution.groups {
        if group.clipped || !(group.value > tol && group.value < 1.0 - tol) {
            continue;
        }
        let total: f64 = group.nodes.iter().map(|&t| through_a[t - 1]).sum();
        if total == 0.0 {
            continue;
        }
        let rate = total / (solution.lambda * group.nodes.len() as f64 + group.k_star() as f64);
        for &(i, t) in &group.support {
            grad_q[[i, t - 1]] += rate;
        }
    }
    Ok(grad_q)
}
