//! Finite-difference checks of the analytic gradients, at the solver level
//! and through the whole model.
//!
//! Trials are drawn at random and redrawn while they sit within `margin` of
//! a kink: a shifted reward near 0 or near its node's `a`, a group value near
//! 0 or 1, two adjacent groups with nearly equal values, or a reward whose
//! min has a near tie. Away from kinks both the solver and the model are
//! smooth, so central differences must agree with the analytic gradient.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::synthetic::standard_normal;
use crate::error::{Error, Result};
use crate::model::{Activation, InputMode, LossKind, PredictorParams, PredictorSpec, SplitParams, TreeModel};
use crate::oracles::finite_diff;
use crate::rewards::argmin_gaps;
use crate::solver::{self, SolverConfig, TreeSolution};
use crate::tree::TreeTopology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub h: f64,
    pub margin: f64,
    pub solver_tolerance: f64,
    pub end_to_end_tolerance: f64,
    /// Draws allowed per requested trial before giving up.
    pub attempts_per_trial: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            h: 1e-5,
            margin: 1e-3,
            solver_tolerance: 1e-4,
            end_to_end_tolerance: 1e-3,
            attempts_per_trial: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Offender {
    pub trial: usize,
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub resampled: usize,
    /// Largest `‖fd − an‖∞ / max(‖fd‖∞, ‖an‖∞)` over trials.
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Largest single-coordinate discrepancy of the worst trial.
    pub worst: Option<Offender>,
}

/// Norm-wise relative error and the index of the largest discrepancy.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (worst, diff) = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .enumerate()
        .fold((0, 0.0f64), |best, (k, d)| if d > best.1 { (k, d) } else { best });
    let scale = inf(analytic).max(inf(numeric)).max(f64::MIN_POSITIVE);
    (diff / scale, worst)
}

/// True when every rewarded entry and every group sits at least `margin`
/// away from a point where the solver map changes its active set.
pub fn solver_is_nondegenerate(solution: &TreeSolution, margin: f64) -> bool {
    if solution.node_group.is_empty() {
        return false;
    }
    let (n, m) = solution.q.dim();
    for i in 0..n {
        for t in 0..m {
            let v = solution.q[[i, t]] + 0.5;
            let a = solution.a[t];
            if v.abs() <= margin || (a > 0.0 && (v - a).abs() <= margin) {
                return false;
            }
        }
    }
    for g in &solution.groups {
        if g.value > 0.0 && g.value < 1.0 && (g.value <= margin || g.value >= 1.0 - margin) {
            return false;
        }
        if g.clipped && g.value >= 1.0 && g.unclipped <= 1.0 + margin {
            return false;
        }
    }
    (2..=m).all(|t| {
        solution.node_group[t - 1] == solution.node_group[t / 2 - 1]
            || solution.a[t - 1] == 0.0
            || solution.a[t / 2 - 1] - solution.a[t - 1] > margin
    })
}

struct Outcome {
    rel: f64,
    offender: Offender,
}

fn run_suite<F>(name: &str, config: &GradcheckConfig, tolerance: f64, mut draw: F) -> Result<SuiteReport>
where
    F: FnMut(&mut ChaCha8Rng, usize) -> Result<Option<Outcome>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let budget = config.trials.saturating_mul(config.attempts_per_trial);
    let (mut done, mut resampled) = (0, 0);
    let mut worst: Option<Outcome> = None;
    while done < config.trials {
        if done + resampled >= budget {
            return Err(Error::Internal(format!(
                "{name}: only {done} non-degenerate trials in {budget} draws"
            )));
        }
        match draw(&mut rng, done)? {
            None => resampled += 1,
            Some(outcome) => {
                if worst.as_ref().is_none_or(|w| outcome.rel > w.rel) {
                    worst = Some(outcome);
                }
                done += 1;
            }
        }
    }
    if config.trials == 0 {
        log::warn!("{name}: zero trials requested; the check passes vacuously");
    }
    let max_rel_err = worst.as_ref().map_or(0.0, |w| w.rel);
    Ok(SuiteReport {
        name: name.to_string(),
        trials: done,
        resampled,
        max_rel_err,
        tolerance,
        passed: max_rel_err < tolerance,
        worst: worst.map(|w| w.offender),
    })
}

/// Checks `q ↦ ⟨G_z, z(q)⟩ + ⟨G_a, a(q)⟩` for random `q`, `G_z`, `G_a`.
/// Instances have 2 to 6 points, depth 1 to 3, `λ` log-uniform in
/// `[0.1, 10]` and `q` uniform in `[-2, 2]`.
pub fn solver_suite(config: &GradcheckConfig) -> Result<SuiteReport> {
    run_suite("solver_jacobian", config, config.solver_tolerance, |rng, trial| {
        let n = rng.gen_range(2..=6);
        let topo = TreeTopology::new(rng.gen_range(1..=3))?;
        let m = topo.num_nodes();
        let lambda = 10f64.powf(rng.gen_range(-1.0..=1.0));
        let solver_config = SolverConfig::new(lambda)?;
        let q = Array2::from_shape_fn((n, m), |_| rng.gen_range(-2.0..=2.0));
        let gz = Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..=1.0));
        let ga = Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..=1.0));
        let solution = solver::solve(q.view(), &solver_config, &topo)?;
        if !solver_is_nondegenerate(&solution, config.margin) {
            return Ok(None);
        }
        let analytic = solver::backward(&solution, gz.view(), ga.view(), &solver_config)?;
        let numeric = finite_diff(
            |q| {
                let s = solver::solve(q.view(), &solver_config, &topo).expect("finite input");
                (&s.z * &gz).sum() + s.a.dot(&ga)
            },
            &q,
            config.h,
        );
        let (rel, k) = relative_error(
            analytic.as_slice().expect("standard layout"),
            numeric.as_slice().expect("standard layout"),
        );
        Ok(Some(Outcome {
            rel,
            offender: Offender {
                trial,
                coordinate: format!("q[{}, node {}]", k / m, k % m + 1),
                analytic: analytic.as_slice().expect("standard layout")[k],
                numeric: numeric.as_slice().expect("standard layout")[k],
            },
        }))
    })
}

/// Random depth-2 model with 3 features, 8 points, `λ = 1`, MSE loss and a
/// linear predictor on `[x ; z]`.
fn random_model(rng: &mut ChaCha8Rng) -> Result<(TreeModel, Array2<f64>, Array2<f64>)> {
    let topo = TreeTopology::new(2)?;
    let (n, d) = (8, 3);
    let x = Array2::from_shape_fn((n, d), |_| standard_normal(rng));
    let y = Array2::from_shape_fn((n, 1), |_| standard_normal(rng));
    let splits = SplitParams {
        weights: Array2::from_shape_fn((topo.num_branching(), d), |_| standard_normal(rng)),
        bias: Array1::from_shape_fn(topo.num_branching(), |_| 0.5 * standard_normal(rng)),
        activation: Activation::Identity,
    };
    let spec = PredictorSpec {
        input: InputMode::Concat,
        ..PredictorSpec::default()
    };
    let predictor = PredictorParams::init(&spec, d, topo.num_nodes(), 1, rng)?;
    Ok((
        TreeModel {
            topology: topo,
            splits,
            predictor,
        },
        x,
        y,
    ))
}

fn flatten(model: &TreeModel) -> Vec<f64> {
    model
        .clone()
        .tensors_mut()
        .into_iter()
        .flat_map(|t| t.to_vec())
        .collect()
}

fn unflatten(model: &mut TreeModel, flat: &[f64]) {
    let mut offset = 0;
    for t in model.tensors_mut() {
        t.copy_from_slice(&flat[offset..offset + t.len()]);
        offset += t.len();
    }
}

/// Gradient of the loss with respect to every split and predictor
/// parameter of a random small model.
pub fn end_to_end_suite(config: &GradcheckConfig) -> Result<SuiteReport> {
    let solver_config = SolverConfig::new(1.0)?;
    run_suite("end_to_end", config, config.end_to_end_tolerance, |rng, trial| {
        let (model, x, y) = random_model(rng)?;
        let s = model.splits.values(x.view())?;
        if argmin_gaps(s.view(), &model.topology)?
            .iter()
            .any(|&g| g <= config.margin)
        {
            return Ok(None);
        }
        let pass = model.loss_and_gradient::<ChaCha8Rng>(x.view(), y.view(), LossKind::Mse, &solver_config, None)?;
        if !solver_is_nondegenerate(&pass.forward.solution, config.margin) {
            return Ok(None);
        }
        let analytic: Vec<f64> = pass.grads.tensors().into_iter().flat_map(|t| t.to_vec()).collect();
        let base = flatten(&model);
        let at = Array2::from_shape_vec((1, base.len()), base).expect("one row");
        let mut probe = model.clone();
        let numeric = finite_diff(
            |theta| {
                unflatten(&mut probe, theta.as_slice().expect("standard layout"));
                probe
                    .loss_and_gradient::<ChaCha8Rng>(x.view(), y.view(), LossKind::Mse, &solver_config, None)
                    .expect("finite input")
                    .loss
            },
            &at,
            config.h,
        );
        let numeric = numeric.into_raw_vec_and_offset().0;
        let (rel, k) = relative_error(&analytic, &numeric);
        let split_count = model.splits.weights.len() + model.splits.bias.len();
        let coordinate = if k < split_count {
            format!("split parameter {k}")
        } else {
            format!("predictor parameter {}", k - split_count)
        };
        Ok(Some(Outcome {
            rel,
            offender: Offender {
                trial,
                coordinate,
                analytic: analytic[k],
                numeric: numeric[k],
            },
        }))
    })
}

pub fn run_all(config: &GradcheckConfig) -> Result<Vec<SuiteReport>> {
    Ok(vec![solver_suite(config)?, end_to_end_suite(config)?])
}
