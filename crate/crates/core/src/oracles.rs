//! Slow, independent reference solvers.
//!
//! None of these share code with the pooling solver: the quadratic program
//! is solved by projected gradient descent with Dykstra projections, the
//! integer program by enumeration, and the scalar subproblem by a grid scan.
//! They exist to cross-check the fast paths and to run the relaxation-gap
//! study.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::tree::{NodeId, TreeTopology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub pg_step: f64,
    pub pg_iters: usize,
    pub dykstra_iters: usize,
    pub grid_step: f64,
    /// Upper bound on `n * |T|` accepted by [`qp_oracle`].
    pub max_variables: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            pg_step: 0.25,
            pg_iters: 200_000,
            dykstra_iters: 500,
            grid_step: 1e-6,
            max_variables: 2000,
        }
    }
}

impl OracleConfig {
    /// Default settings with the largest admissible step `1 / max(1, λ)`.
    pub fn tuned_for(lambda: f64) -> Self {
        Self {
            pg_step: 1.0 / lambda.max(1.0),
            ..Self::default()
        }
    }

    pub fn validate_for(&self, lambda: f64) -> Result<()> {
        let lipschitz = lambda.max(1.0);
        if !(self.pg_step > 0.0) || self.pg_step > 1.0 / lipschitz {
            return Err(Error::config(
                "pg_step",
                format!("step {} must lie in (0, 1/L] with L = {lipschitz}", self.pg_step),
            ));
        }
        if self.pg_iters == 0 || self.dykstra_iters == 0 {
            return Err(Error::config("pg_iters", "iteration budgets must be positive"));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::config("grid_step", "must be positive"));
        }
        Ok(())
    }
}

/// Primal point `(z, a)` returned by the oracles.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub z: Array2<f64>,
    pub a: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Euclidean projection onto
/// `{0 ≤ z_it ≤ a_t ≤ 1, a_t ≤ a_parent(t)}` by Dykstra's method over the
/// individual halfspaces `z_it ≤ a_t`, `a_t ≤ a_parent(t)` and the two boxes.
struct DykstraProjector {
    n: usize,
    m: usize,
    cap_increments: Vec<(f64, f64)>,
    order_increments: Vec<(f64, f64)>,
    z_box_increment: Vec<f64>,
    a_box_increment: Vec<f64>,
}

impl DykstraProjector {
    fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            cap_increments: vec![(0.0, 0.0); n * m],
            order_increments: vec![(0.0, 0.0); m],
            z_box_increment: vec![0.0; n * m],
            a_box_increment: vec![0.0; m],
        }
    }

    /// Projects a pair onto `{x ≤ y}`.
    fn halfspace(x: f64, y: f64) -> (f64, f64) {
        if x <= y {
            (x, y)
        } else {
            let mid = 0.5 * (x + y);
            (mid, mid)
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn project(&mut self, z: &mut [f64], a: &mut [f64], max_cycles: usize) {
        let (n, m) = (self.n, self.m);
        self.cap_increments.iter_mut().for_each(|p| *p = (0.0, 0.0));
        self.order_increments.iter_mut().for_each(|p| *p = (0.0, 0.0));
        self.z_box_increment.iter_mut().for_each(|p| *p = 0.0);
        self.a_box_increment.iter_mut().for_each(|p| *p = 0.0);
        let mut previous_z = z.to_vec();
        let mut previous_a = a.to_vec();
        for _ in 0..max_cycles {
            for i in 0..n {
                for t in 0..m {
                    let k = i * m + t;
                    let (pz, pa) = self.cap_increments[k];
                    let (wz, wa) = (z[k] + pz, a[t] + pa);
                    let (nz, na) = Self::halfspace(wz, wa);
                    self.cap_increments[k] = (wz - nz, wa - na);
                    z[k] = nz;
                    a[t] = na;
                }
            }
            for t in 1..m {
                let p = t.div_ceil(2) - 1;
                let (pc, pp) = self.order_increments[t];
                let (wc, wp) = (a[t] + pc, a[p] + pp);
                let (nc, np) = Self::halfspace(wc, wp);
                self.order_increments[t] = (wc - nc, wp - np);
                a[t] = nc;
                a[p] = np;
            }
            for (v, inc) in z.iter_mut().zip(self.z_box_increment.iter_mut()) {
                let w = *v + *inc;
                let nv = w.max(0.0);
                *inc = w - nv;
                *v = nv;
            }
            for (v, inc) in a.iter_mut().zip(self.a_box_increment.iter_mut()) {
                let w = *v + *inc;
                let nv = w.clamp(0.0, 1.0);
                *inc = w - nv;
                *v = nv;
            }
            let moved = z
                .iter()
                .zip(&previous_z)
                .chain(a.iter().zip(&previous_a))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if moved < 1e-15 {
                break;
            }
            previous_z.copy_from_slice(z);
            previous_a.copy_from_slice(a);
        }
        // Dykstra iterates are only asymptotically feasible; finish with a
        // feasibility repair so callers always receive a feasible point.
        for v in a.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        for t in 1..m {
            let p = t.div_ceil(2) - 1;
            a[t] = a[t].min(a[p]);
        }
        for i in 0..n {
            for t in 0..m {
                let k = i * m + t;
                z[k] = z[k].clamp(0.0, a[t]);
            }
        }
    }
}

fn relaxed_objective(q: &[f64], z: &[f64], a: &[f64], lambda: f64) -> f64 {
    let reg: f64 = a.iter().map(|v| v * v).sum();
    let fit: f64 = z
        .iter()
        .zip(q)
        .map(|(z, q)| {
            let d = z - q - 0.5;
            d * d
        })
        .sum();
    0.5 * lambda * reg + 0.5 * fit
}

/// Solves the relaxed traversal-and-pruning program by projected gradient
/// descent. Stops once the objective has decreased by less than `1e-12`
/// over the last 100 iterations and the last step moved the iterate by less
/// than `1e-11`; fails if `pg_iters` is exhausted first.
pub fn qp_oracle(
    q: ArrayView2<f64>,
    lambda: f64,
    topology: &TreeTopology,
    config: &OracleConfig,
) -> Result<OracleSolution> {
    config.validate_for(lambda)?;
    let (n, m) = q.dim();
    if m != topology.num_nodes() {
        return Err(Error::Argument(format!(
            "reward matrix has {m} columns, tree has {} nodes",
            topology.num_nodes()
        )));
    }
    if n * m > config.max_variables {
        return Err(Error::Argument(format!(
            "{} traversal variables exceed the oracle limit of {}",
            n * m,
            config.max_variables
        )));
    }
    let q_flat: Vec<f64> = q.iter().copied().collect();
    let mut z = vec![0.0; n * m];
    let mut a = vec![0.0; m];
    let mut projector = DykstraProjector::new(n, m);
    let step = config.pg_step;
    let mut history = std::collections::VecDeque::with_capacity(101);
    history.push_back(relaxed_objective(&q_flat, &z, &a, lambda));
    for iteration in 1..=config.pg_iters {
        let mut next_z: Vec<f64> = z.iter().zip(&q_flat).map(|(z, q)| z - step * (z - q - 0.5)).collect();
        let mut next_a: Vec<f64> = a.iter().map(|a| a - step * lambda * a).collect();
        projector.project(&mut next_z, &mut next_a, config.dykstra_iters);
        let moved = next_z
            .iter()
            .zip(&z)
            .chain(next_a.iter().zip(&a))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        z = next_z;
        a = next_a;
        let obj = relaxed_objective(&q_flat, &z, &a, lambda);
        history.push_back(obj);
        if history.len() > 101 {
            history.pop_front();
        }
        if history.len() == 101 && history[0] - obj < 1e-12 && moved < 1e-11 {
            return Ok(OracleSolution {
                z: Array2::from_shape_vec((n, m), z).expect("shape"),
                a: Array1::from(a),
                objective: obj,
                iterations: iteration,
            });
        }
    }
    Err(Error::OracleFailure(format!(
        "projected gradient did not converge within {} iterations",
        config.pg_iters
    )))
}

/// Solves the binary pruning program by enumerating every hierarchical
/// `a ∈ {0,1}^|T|`. For a fixed `a` the best `z_it` is `a_t · 1[q_it > 0]`.
/// Ties prefer fewer active nodes, then the lexicographically smallest `a`.
pub fn mip_oracle(q: ArrayView2<f64>, lambda: f64, topology: &TreeTopology) -> Result<OracleSolution> {
    let (n, m) = q.dim();
    if m != topology.num_nodes() {
        return Err(Error::Argument(format!(
            "reward matrix has {m} columns, tree has {} nodes",
            topology.num_nodes()
        )));
    }
    if m > 15 {
        return Err(Error::Argument(format!(
            "enumeration supports at most 15 nodes, got {m}"
        )));
    }
    let gains: Vec<f64> = (0..m).map(|t| (0..n).map(|i| q[[i, t]].max(0.0)).sum()).collect();
    let mut best: Option<(f64, u32, Vec<u8>)> = None;
    for mask in 0u32..(1 << m) {
        let bits: Vec<u8> = (0..m).map(|t| ((mask >> t) & 1) as u8).collect();
        let hierarchical = (1..m).all(|t| bits[t] <= bits[t.div_ceil(2) - 1]);
        if !hierarchical {
            continue;
        }
        let active = mask.count_ones();
        let value: f64 = (0..m).filter(|&t| bits[t] == 1).map(|t| gains[t]).sum::<f64>() - 0.5 * lambda * active as f64;
        let better = match &best {
            None => true,
            Some((bv, ba, bb)) => value > *bv || (value == *bv && (active < *ba || (active == *ba && bits < *bb))),
        };
        if better {
            best = Some((value, active, bits));
        }
    }
    let (objective, _, bits) = best.expect("the all-zero vector is always feasible");
    let a = Array1::from_iter(bits.iter().map(|&b| b as f64));
    let z = Array2::from_shape_fn((n, m), |(i, t)| if q[[i, t]] > 0.0 { a[t] } else { 0.0 });
    Ok(OracleSolution {
        z,
        a,
        objective,
        iterations: 1 << m,
    })
}

/// `(λ|G|/2) a² + Σ_{v ≥ a} ½ (a − v)²`, evaluated term by term.
fn pooled_objective(a: f64, weight: f64, values: &[f64]) -> f64 {
    0.5 * weight * a * a
        + values
            .iter()
            .filter(|&&v| a <= v)
            .map(|&v| 0.5 * (a - v) * (a - v))
            .sum::<f64>()
}

/// Minimizes the pooled scalar objective over `[0, 1]` by a grid scan
/// followed by a ternary search inside the best grid cell.
pub fn scalar_grid_oracle(lambda: f64, group_size: usize, values: &[f64], grid_step: f64) -> f64 {
    let weight = lambda * group_size as f64;
    let mut ascending = values.to_vec();
    ascending.sort_by(f64::total_cmp);
    let steps = (1.0 / grid_step).round() as usize;

    // Running sums over the values still at or above the grid point.
    let mut next = 0;
    let (mut count, mut sum, mut sum_sq) = (0.0, 0.0, 0.0);
    for &v in &ascending {
        count += 1.0;
        sum += v;
        sum_sq += v * v;
    }
    let mut best = (f64::INFINITY, 0.0);
    for j in 0..=steps {
        let a = (j as f64 * grid_step).min(1.0);
        while next < ascending.len() && ascending[next] < a {
            let v = ascending[next];
            count -= 1.0;
            sum -= v;
            sum_sq -= v * v;
            next += 1;
        }
        let f = 0.5 * weight * a * a + 0.5 * (count * a * a - 2.0 * a * sum + sum_sq);
        if f < best.0 {
            best = (f, a);
        }
    }
    let (mut lo, mut hi) = ((best.1 - grid_step).max(0.0), (best.1 + grid_step).min(1.0));
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if pooled_objective(m1, weight, values) <= pooled_objective(m2, weight, values) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let refined = 0.5 * (lo + hi);
    if pooled_objective(refined, weight, values) < pooled_objective(best.1, weight, values) {
        refined
    } else {
        best.1
    }
}

/// Central differences `(f(x + h e) − f(x − h e)) / 2h` for every coordinate.
pub fn finite_diff<F>(mut f: F, at: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(at.dim());
    let mut x = at.clone();
    for idx in ndarray::indices(at.dim()) {
        let original = x[idx];
        x[idx] = original + h;
        let plus = f(&x);
        x[idx] = original - h;
        let minus = f(&x);
        x[idx] = original;
        grad[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Dendrogram purity by explicit pair enumeration: the mean, over unordered
/// same-class pairs, of the fraction of that class among all points in the
/// subtree rooted at the pair's least common ancestor.
pub fn dendrogram_purity_oracle(leaves: &[NodeId], labels: &[usize], topology: &TreeTopology) -> Result<f64> {
    if leaves.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} leaf assignments for {} labels",
            leaves.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = leaves.iter().find(|&&t| !topology.contains(t)) {
        return Err(Error::Argument(format!("node {bad} is not in the tree")));
    }
    let n = leaves.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] != labels[j] {
                continue;
            }
            let lca = TreeTopology::lowest_common_ancestor(leaves[i], leaves[j]);
            let (mut inside, mut same) = (0usize, 0usize);
            for k in 0..n {
                if TreeTopology::is_descendant(leaves[k], lca) {
                    inside += 1;
                    if labels[k] == labels[i] {
                        same += 1;
                    }
                }
            }
            total += same as f64 / inside as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Argument(
            "dendrogram purity is undefined when every class has fewer than two points".into(),
        ));
    }
    Ok(total / pairs as f64)
}
