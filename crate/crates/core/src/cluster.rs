//! Self-supervised hierarchical clustering and dendrogram purity.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::tree::{NodeId, TreeTopology};

/// Splits columns into inputs and regression targets. Returns
/// `(features, targets)`, both keeping the original column order.
pub fn make_self_supervised(x: ArrayView2<f64>, target_columns: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = x.ncols();
    let mut seen = vec![false; d];
    for &j in target_columns {
        if j >= d {
            return Err(Error::Argument(format!(
                "target column {j} is out of range for {d} columns"
            )));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::Argument(format!("target column {j} is listed twice")));
        }
    }
    if target_columns.is_empty() || target_columns.len() >= d {
        return Err(Error::Argument(format!(
            "need between 1 and {} target columns, got {}",
            d.saturating_sub(1),
            target_columns.len()
        )));
    }
    let inputs: Vec<usize> = (0..d).filter(|&j| !seen[j]).collect();
    let mut targets = target_columns.to_vec();
    targets.sort_unstable();
    Ok((x.select(Axis(1), &inputs), x.select(Axis(1), &targets)))
}

/// Moves a routed leaf up to its deepest ancestor-or-self with `a_t > 0`
/// (the root when the whole path is pruned).
pub fn collapse_to_active(leaf: NodeId, a: ArrayView1<f64>) -> NodeId {
    let mut t = leaf;
    while t > 1 && !(a[t - 1] > 0.0) {
        t /= 2;
    }
    t
}

fn pairs(count: u64) -> u64 {
    count * count.saturating_sub(1) / 2
}

/// Mean, over unordered same-class pairs, of the share of that class among
/// the points under the pair's lowest common ancestor. Points may sit at any
/// node, not only at leaves.
pub fn dendrogram_purity(assignment: &[NodeId], labels: &[usize], topology: &TreeTopology) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} node assignments for {} labels",
            assignment.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&t| !topology.contains(t)) {
        return Err(Error::Argument(format!("node {bad} is not in the tree")));
    }
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let m = topology.num_nodes();
    // counts[t - 1][c]: points of class c in the subtree rooted at t.
    let mut counts = vec![vec![0u64; classes]; m];
    for (&t, &c) in assignment.iter().zip(labels) {
        counts[t - 1][c] += 1;
    }
    for t in (2..=m).rev() {
        let (parent, child) = counts.split_at_mut(t - 1);
        for (p, &v) in parent[t / 2 - 1].iter_mut().zip(&child[0]) {
            *p += v;
        }
    }
    let mut total_pairs = 0u64;
    let mut weighted = 0.0;
    for t in 1..=m {
        let here = &counts[t - 1];
        let size: u64 = here.iter().sum();
        if size < 2 {
            continue;
        }
        for c in 0..classes {
            let mut meeting_here = pairs(here[c]);
            if !topology.is_leaf(t) {
                meeting_here -= pairs(counts[2 * t - 1][c]) + pairs(counts[2 * t][c]);
            }
            if meeting_here > 0 {
                total_pairs += meeting_here;
                weighted += meeting_here as f64 * here[c] as f64 / size as f64;
            }
        }
    }
    if total_pairs == 0 {
        return Err(Error::Argument(
            "dendrogram purity is undefined when every class has fewer than two points".into(),
        ));
    }
    Ok(weighted / total_pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn self_supervised_columns() {
        let x = array![[0.0, 1.0, 2.0, 3.0]];
        let (f, t) = make_self_supervised(x.view(), &[0, 1]).unwrap();
        assert_eq!(f, array![[2.0, 3.0]]);
        assert_eq!(t, array![[0.0, 1.0]]);
        assert!(make_self_supervised(x.view(), &[0, 1, 2, 3]).is_err());
        assert!(make_self_supervised(x.view(), &[1, 1]).is_err());
        assert!(make_self_supervised(x.view(), &[4]).is_err());
        assert!(make_self_supervised(x.view(), &[]).is_err());
    }

    #[test]
    fn purity_examples() {
        let topo = TreeTopology::new(2).unwrap();
        assert_eq!(dendrogram_purity(&[4, 4, 5, 5], &[0, 0, 1, 1], &topo).unwrap(), 1.0);
        assert_eq!(dendrogram_purity(&[4, 4, 5, 5], &[0, 1, 0, 1], &topo).unwrap(), 0.5);
        assert_eq!(dendrogram_purity(&[4, 6, 7, 5], &[3, 3, 3, 3], &topo).unwrap(), 1.0);
        assert!(dendrogram_purity(&[4, 5], &[0, 1], &topo).is_err());
        assert!(dendrogram_purity(&[8], &[0], &topo).is_err());
    }

    #[test]
    fn collapse_walks_to_active_ancestor() {
        let a = array![1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(collapse_to_active(5, a.view()), 2);
        assert_eq!(collapse_to_active(7, a.view()), 1);
        let all = array![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(collapse_to_active(6, all.view()), 6);
    }
}
