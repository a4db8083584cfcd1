//! Split functions, predictor, losses, and the composed differentiable
//! chain `x → s → q → (z, a) → f(x, z) → loss`.

mod loss;
mod predictor;
mod split;

pub use loss::{loss_and_grad, sigmoid, LossKind};
pub use predictor::{Dense, InputMode, PredictorCache, PredictorParams, PredictorSpec};
pub use split::{elu, init_bias, Activation, SplitCache, SplitGrads, SplitParams};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::Result;
use crate::rewards::{compute_rewards, rewards_backward, RewardMatrix};
use crate::solver::{self, project_traversals, SolverConfig, TreeSolution};
use crate::tree::TreeTopology;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub topology: TreeTopology,
    pub splits: SplitParams,
    pub predictor: PredictorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub splits: SplitGrads,
    pub predictor: PredictorParams,
}

impl ModelGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.splits.weights.as_slice().expect("standard layout"),
            self.splits.bias.as_slice().expect("standard layout"),
        ];
        for layer in &self.predictor.layers {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Intermediate values of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub split_cache: SplitCache,
    pub rewards: RewardMatrix,
    pub solution: TreeSolution,
    pub outputs: Array2<f64>,
    pub predictor_cache: PredictorCache,
}

#[derive(Debug, Clone)]
pub struct BatchPass {
    pub loss: f64,
    pub grads: ModelGrads,
    pub forward: ForwardPass,
}

impl TreeModel {
    pub fn new<R: Rng>(
        topology: TreeTopology,
        features: usize,
        outputs: usize,
        activation: Activation,
        spec: &PredictorSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let splits = SplitParams::init(&topology, features, activation, rng);
        let predictor = PredictorParams::init(spec, features, topology.num_nodes(), outputs, rng)?;
        Ok(Self {
            topology,
            splits,
            predictor,
        })
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.splits.weights.as_slice_mut().expect("standard layout"),
            self.splits.bias.as_slice_mut().expect("standard layout"),
        ];
        for layer in &mut self.predictor.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn rewards(&self, x: ArrayView2<f64>) -> Result<RewardMatrix> {
        let s = self.splits.values(x)?;
        compute_rewards(s.view(), &self.topology)
    }

    /// Solves the pruning program on the batch. Dropout is active only when
    /// `rng` is given.
    pub fn forward<R: Rng>(
        &self,
        x: ArrayView2<f64>,
        solver: &SolverConfig,
        rng: Option<&mut R>,
    ) -> Result<ForwardPass> {
        let (s, split_cache) = self.splits.forward(x)?;
        let rewards = compute_rewards(s.view(), &self.topology)?;
        let solution = solver::solve(rewards.q.view(), solver, &self.topology)?;
        let (outputs, predictor_cache) = self.predictor.forward(x, solution.z.view(), rng)?;
        Ok(ForwardPass {
            split_cache,
            rewards,
            solution,
            outputs,
            predictor_cache,
        })
    }

    /// Predictions with a fixed pruning vector: no solve, each point is
    /// clipped independently. Returns `(outputs, z)`.
    pub fn forward_frozen(&self, x: ArrayView2<f64>, a: ArrayView1<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let rewards = self.rewards(x)?;
        let z = project_traversals(rewards.q.view(), a)?;
        let (outputs, _) = self.predictor.forward::<rand::rngs::ThreadRng>(x, z.view(), None)?;
        Ok((outputs, z))
    }

    /// Loss on the batch and its gradient with respect to every parameter.
    /// The pruning vector receives gradient only through the clipping of `z`.
    pub fn loss_and_gradient<R: Rng>(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        loss: LossKind,
        solver: &SolverConfig,
        rng: Option<&mut R>,
    ) -> Result<BatchPass> {
        let forward = self.forward(x, solver, rng)?;
        let (value, grad_out) = loss_and_grad(loss, forward.outputs.view(), targets)?;
        let (predictor_grads, grad_z) = self.predictor.backward(&forward.predictor_cache, grad_out.view());
        let grad_a = Array1::zeros(self.topology.num_nodes());
        let grad_q = solver::backward(&forward.solution, grad_z.view(), grad_a.view(), solver)?;
        let grad_s = rewards_backward(&forward.rewards, grad_q.view())?;
        let split_grads = self.splits.backward(x, &forward.split_cache, grad_s.view());
        Ok(BatchPass {
            loss: value,
            grads: ModelGrads {
                splits: split_grads,
                predictor: predictor_grads,
            },
            forward,
        })
    }

    /// Leaf reached by each point under hard routing (`s = 0` goes right).
    pub fn route(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let s = self.splits.values(x)?;
        Ok(s.rows()
            .into_iter()
            .map(|row| self.topology.route(|t| row[t - 1]))
            .collect())
    }
}
