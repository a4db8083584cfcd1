//! Per-point node rewards `q_it` from split values, and their gradient.
//!
//! `q_it` is the smallest margin along the path to `t`: `s_u` for ancestors
//! left through their right child and `-s_u` for ancestors left through their
//! left child. The root reward is fixed to 1. The backward pass routes each
//! incoming gradient through the single minimizing ancestor.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::tree::{NodeId, Side, TreeTopology};

/// Split values `s_t(x_i)`, one column per branching node (column `t - 1`).
pub type SplitValues = Array2<f64>;

/// The ancestor (and sign) that attains the minimum for one reward entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Minimizer {
    /// Ancestor id; 0 marks the root column, which has no minimizer.
    pub node: u32,
    /// `Left` means the term is `-s_node`, `Right` means `+s_node`.
    pub side: Side,
}

impl Minimizer {
    const ROOT: Minimizer = Minimizer {
        node: 0,
        side: Side::Right,
    };
}

#[derive(Debug, Clone)]
pub struct RewardMatrix {
    /// `n x |T|` rewards; column `t - 1` holds node `t`.
    pub q: Array2<f64>,
    argmin: Vec<Minimizer>,
}

impl RewardMatrix {
    pub fn num_points(&self) -> usize {
        self.q.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.q.ncols()
    }

    pub fn minimizer(&self, i: usize, t: NodeId) -> Minimizer {
        self.argmin[i * self.q.ncols() + t - 1]
    }
}

fn check_splits(splits: ArrayView2<f64>, topology: &TreeTopology) -> Result<()> {
    if splits.ncols() != topology.num_branching() {
        return Err(Error::Argument(format!(
            "split matrix has {} columns, tree has {} branching nodes",
            splits.ncols(),
            topology.num_branching()
        )));
    }
    if let Some(((i, c), v)) = splits.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "split value at point {i}, node {} is {v}",
            c + 1
        )));
    }
    Ok(())
}

/// Computes `q` by recursion down the tree: a child's candidate set is its
/// parent's plus one new term from the parent itself. On ties the
/// smaller ancestor id is kept.
pub fn compute_rewards(splits: ArrayView2<f64>, topology: &TreeTopology) -> Result<RewardMatrix> {
    if topology.depth() == 0 {
        return Err(Error::Argument("reward computation needs depth >= 1".into()));
    }
    check_splits(splits, topology)?;
    let n = splits.nrows();
    let m = topology.num_nodes();
    let mut q = Array2::<f64>::zeros((n, m));
    let mut argmin = vec![Minimizer::ROOT; n * m];
    for i in 0..n {
        let s = splits.row(i);
        let mut row = q.row_mut(i);
        let mins = &mut argmin[i * m..(i + 1) * m];
        row[0] = 1.0;
        for t in 2..=m {
            let parent = t / 2;
            let (term, side) = if t % 2 == 0 {
                (-s[parent - 1], Side::Left)
            } else {
                (s[parent - 1], Side::Right)
            };
            let fresh = Minimizer {
                node: parent as u32,
                side,
            };
            if parent == 1 || term < row[parent - 1] {
                row[t - 1] = term;
                mins[t - 1] = fresh;
            } else {
                row[t - 1] = row[parent - 1];
                mins[t - 1] = mins[parent - 1];
            }
        }
    }
    Ok(RewardMatrix { q, argmin })
}

/// Gradient with respect to the split values given `dL/dq`.
pub fn rewards_backward(rewards: &RewardMatrix, grad_q: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, m) = rewards.q.dim();
    if grad_q.dim() != (n, m) {
        return Err(Error::Argument(format!(
            "reward gradient has shape {:?}, expected {:?}",
            grad_q.dim(),
            (n, m)
        )));
    }
    let branching = m.div_ceil(2) - 1;
    let mut grad_s = Array2::<f64>::zeros((n, branching));
    for i in 0..n {
        for t in 2..=m {
            let g = grad_q[[i, t - 1]];
            if g == 0.0 {
                continue;
            }
            let min = rewards.argmin[i * m + t - 1];
            let signed = match min.side {
                Side::Left => -g,
                Side::Right => g,
            };
            grad_s[[i, min.node as usize - 1]] += signed;
        }
    }
    Ok(grad_s)
}

/// For every non-root entry, the distance between the smallest and the
/// second smallest candidate in its min (`inf` for singleton sets).
/// Used to detect points where the min is not differentiable.
pub fn argmin_gaps(splits: ArrayView2<f64>, topology: &TreeTopology) -> Result<Array2<f64>> {
    check_splits(splits, topology)?;
    let n = splits.nrows();
    let m = topology.num_nodes();
    let mut gaps = Array2::from_elem((n, m), f64::INFINITY);
    for t in 2..=m {
        let (left, right) = topology.ancestor_sets(t)?;
        for i in 0..n {
            let mut terms: Vec<f64> = left
                .iter()
                .map(|&u| -splits[[i, u - 1]])
                .chain(right.iter().map(|&u| splits[[i, u - 1]]))
                .collect();
            if terms.len() < 2 {
                continue;
            }
            terms.sort_by(f64::total_cmp);
            gaps[[i, t - 1]] = terms[1] - terms[0];
        }
    }
    Ok(gaps)
}
