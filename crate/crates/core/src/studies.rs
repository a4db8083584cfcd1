//! Relaxation-gap study against the exact pruning program, and solver
//! timing against the generic oracle.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracles::{mip_oracle, qp_oracle, OracleConfig};
use crate::solver::{self, SolverConfig};
use crate::tree::TreeTopology;

/// Uniform `[lo, hi]` rewards.
pub fn uniform_rewards<R: Rng>(n: usize, topology: &TreeTopology, lo: f64, hi: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, topology.num_nodes()), |_| rng.gen_range(lo..=hi))
}

/// Caps every entry by its parent's (already capped) entry, so rewards never
/// increase along a path.
pub fn cap_by_parent(q: &mut Array2<f64>) {
    for t in 2..=q.ncols() {
        for i in 0..q.nrows() {
            q[[i, t - 1]] = q[[i, t - 1]].min(q[[i, t / 2 - 1]]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapStudyConfig {
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub depth: usize,
    pub instances: usize,
    pub seed: u64,
}

impl Default for GapStudyConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.1, 1.0, 10.0, 100.0],
            n: 10,
            depth: 2,
            instances: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub lambda: f64,
    /// Mean over instances of `‖a_relaxed − a_exact‖∞`.
    pub mean_gap_a: f64,
    /// Mean over instances of `max |z_relaxed − z_exact|`.
    pub mean_gap_z: f64,
    /// Largest value either gap can take; every variable lies in `[0, 1]`.
    pub max_possible_gap: f64,
    pub std_gap_a: f64,
    pub std_gap_z: f64,
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Draws `instances` parent-capped reward matrices uniform in `[-2, 2]` and,
/// for every λ, compares the relaxed solution with the exact binary one.
/// The same instances are used for every λ.
pub fn gap_study(config: &GapStudyConfig) -> Result<Vec<GapRow>> {
    if config.lambdas.is_empty() {
        return Err(Error::config("lambda", "the λ grid is empty"));
    }
    for &l in &config.lambdas {
        SolverConfig::new(l)?;
    }
    let topology = TreeTopology::new(config.depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let instances: Vec<Array2<f64>> = (0..config.instances)
        .map(|_| {
            let mut q = uniform_rewards(config.n, &topology, -2.0, 2.0, &mut rng);
            cap_by_parent(&mut q);
            q
        })
        .collect();
    config
        .lambdas
        .iter()
        .map(|&lambda| {
            let solver_config = SolverConfig::new(lambda)?;
            let (mut gaps_a, mut gaps_z) = (Vec::new(), Vec::new());
            for q in &instances {
                let relaxed = solver::solve(q.view(), &solver_config, &topology)?;
                let exact = mip_oracle(q.view(), lambda, &topology)?;
                gaps_a.push(max_abs_diff(&relaxed.a, &exact.a));
                gaps_z.push(max_abs_diff(&relaxed.z, &exact.z));
            }
            let (mean_gap_a, std_gap_a) = mean_std(&gaps_a);
            let (mean_gap_z, std_gap_z) = mean_std(&gaps_z);
            Ok(GapRow {
                lambda,
                mean_gap_a,
                mean_gap_z,
                max_possible_gap: 1.0,
                std_gap_a,
                std_gap_z,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub depths: Vec<usize>,
    pub ns: Vec<usize>,
    /// Timed repetitions per cell; one extra warm-up run is discarded.
    pub reps: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Cells with more traversal variables skip the oracle.
    pub oracle_cap: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            depths: vec![2, 4, 6],
            ns: vec![100],
            reps: 5,
            lambda: 1.0,
            seed: 0,
            oracle_cap: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub depth: usize,
    pub solver_ms_median: f64,
    pub oracle_ms_median: Option<f64>,
    /// `oracle_ms_median / solver_ms_median`.
    pub speedup: Option<f64>,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    if values.len() % 2 == 1 {
        values[k]
    } else {
        0.5 * (values[k - 1] + values[k])
    }
}

/// Median wall time in milliseconds of `f` over `reps` runs after one
/// discarded warm-up run. Each run gets a fresh input from `make`.
pub fn time_median<I, M, F>(reps: usize, mut make: M, mut f: F) -> Result<f64>
where
    M: FnMut() -> I,
    F: FnMut(I) -> Result<()>,
{
    if reps == 0 {
        return Err(Error::config("reps", "at least one repetition is needed"));
    }
    f(make())?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let input = make();
        let start = Instant::now();
        f(input)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&mut times))
}

/// Times one `(n, depth)` cell on rewards uniform in `[-2, 2]`.
pub fn bench_cell(n: usize, depth: usize, config: &BenchConfig, oracle: &OracleConfig) -> Result<BenchRow> {
    let topology = TreeTopology::new(depth)?;
    let solver_config = SolverConfig::new(config.lambda)?;
    let seed = config.seed ^ ((n as u64) << 32) ^ depth as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let solver_ms = time_median(
        config.reps,
        || uniform_rewards(n, &topology, -2.0, 2.0, &mut rng),
        |q| solver::solve(q.view(), &solver_config, &topology).map(drop),
    )?;
    let oracle_ms = if n * topology.num_nodes() <= config.oracle_cap {
        let oracle = OracleConfig {
            max_variables: config.oracle_cap,
            ..*oracle
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some(time_median(
            config.reps,
            || uniform_rewards(n, &topology, -2.0, 2.0, &mut rng),
            |q| qp_oracle(q.view(), config.lambda, &topology, &oracle).map(drop),
        )?)
    } else {
        None
    };
    Ok(BenchRow {
        n,
        depth,
        solver_ms_median: solver_ms,
        oracle_ms_median: oracle_ms,
        speedup: oracle_ms.map(|o| o / solver_ms),
    })
}

pub fn bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let oracle = OracleConfig::tuned_for(config.lambda);
    let mut rows = Vec::new();
    for &depth in &config.depths {
        for &n in &config.ns {
            rows.push(bench_cell(n, depth, config, &oracle)?);
        }
    }
    Ok(rows)
}
