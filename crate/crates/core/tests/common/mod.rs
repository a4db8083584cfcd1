#![allow(dead_code)]

use latent_tree::solver::TreeSolution;
use latent_tree::TreeTopology;
use ndarray::Array2;
use rand::Rng;

pub fn uniform_q<R: Rng>(n: usize, topology: &TreeTopology, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, topology.num_nodes()), |_| rng.gen_range(-2.0..=2.0))
}

pub fn max_gap(solution: &TreeSolution, z: &Array2<f64>, a: &ndarray::Array1<f64>) -> f64 {
    solution
        .z
        .iter()
        .zip(z)
        .chain(solution.a.iter().zip(a))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// First violated structural property of a solver output: the merge count,
/// exact feasibility, and first-order optimality of every pooled group.
pub fn structural_violation(sol: &TreeSolution, topology: &TreeTopology) -> Option<String> {
    let m = topology.num_nodes();
    if sol.merges > m - 1 {
        return Some(format!("{} merges on {m} nodes", sol.merges));
    }
    for t in 1..=m {
        let a = sol.a[t - 1];
        if !(0.0..=1.0).contains(&a) {
            return Some(format!("a_{t} = {a} outside [0, 1]"));
        }
        if let Some(p) = topology.parent(t) {
            if a > sol.a[p - 1] {
                return Some(format!("a_{t} = {a} exceeds its parent's {}", sol.a[p - 1]));
            }
        }
        for i in 0..sol.z.nrows() {
            let z = sol.z[[i, t - 1]];
            if !(0.0 <= z && z <= a) {
                return Some(format!("z[{i}, {t}] = {z} outside [0, {a}]"));
            }
        }
    }
    for (g, group) in sol.groups.iter().enumerate() {
        let v = group.value;
        if group.nodes.iter().any(|&t| sol.a[t - 1] != v) {
            return Some(format!("group {g} members disagree with its value"));
        }
        // Derivative of the group objective at v.
        let slope = |v: f64| {
            sol.lambda * group.nodes.len() as f64 * v
                + group
                    .nodes
                    .iter()
                    .flat_map(|&t| sol.q.column(t - 1).to_vec())
                    .map(|q| q + 0.5)
                    .filter(|&s| s > v)
                    .map(|s| v - s)
                    .sum::<f64>()
        };
        let residual = if v > 0.0 && v < 1.0 {
            slope(v).abs()
        } else if v == 0.0 {
            (-slope(0.0)).max(0.0)
        } else {
            slope(1.0).max(0.0)
        };
        if residual.is_nan() || residual >= 1e-9 {
            return Some(format!("group {g} KKT residual {residual:e}"));
        }
    }
    None
}
