//! Mini-batch training with the tree program solved inside every batch,
//! learning-rate decay on plateaus, early stopping, and frozen-pruning
//! inference.

mod optim;

pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::model::{
    init_bias, loss_and_grad, Activation, LossKind, PredictorParams, PredictorSpec, SplitParams, TreeModel,
};
use crate::solver::{self, SolverConfig};
use crate::tree::{NodeId, TreeTopology};

/// Largest number of rows solved as one batch during evaluation.
pub const EVAL_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Clip every point against the pruning vector frozen after training.
    #[default]
    Frozen,
    /// Solve the tree program again on the whole input.
    Resolve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub depth: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_decay_factor: f64,
    pub lr_plateau_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub loss: LossKind,
    pub predictor: PredictorSpec,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            lambda: 1.0,
            learning_rate: 1e-3,
            batch_size: 512,
            max_epochs: 100,
            patience: 10,
            lr_decay_factor: 10.0,
            lr_plateau_epochs: 2,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            loss: LossKind::Mse,
            predictor: PredictorSpec::default(),
            activation: Activation::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        TreeTopology::new(self.depth)?;
        if self.depth == 0 {
            return Err(Error::config("depth", "training needs at least one split"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("lambda", "lambda must be positive and finite"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if !(self.lr_decay_factor > 0.0) || !self.lr_decay_factor.is_finite() {
            return Err(Error::config("lr_decay_factor", "must be positive and finite"));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("lr_plateau_epochs", self.lr_plateau_epochs),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        self.optimizer.validate()?;
        self.predictor.validate()
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        SolverConfig::new(self.lambda)
    }
}

/// Training and validation matrices, already preprocessed. Targets have one
/// column per output.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub x_train: ArrayView2<'a, f64>,
    pub y_train: ArrayView2<'a, f64>,
    pub x_val: ArrayView2<'a, f64>,
    pub y_val: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    /// Share of nodes with `a_t > 0`, averaged over the epoch's batches.
    pub active_node_fraction: f64,
    /// Mean of `a` over nodes, averaged over the epoch's batches.
    pub mean_a: f64,
    pub wall_ms: f64,
}

impl EpochRecord {
    /// Every field except wall time.
    pub fn trace(&self) -> [f64; 6] {
        [
            self.epoch as f64,
            self.train_loss,
            self.val_loss,
            self.lr,
            self.active_node_fraction,
            self.mean_a,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: TreeModel,
    pub a_frozen: Array1<f64>,
    pub lambda: f64,
    pub loss: LossKind,
    pub standardizer: Option<Standardizer>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub outputs: Array2<f64>,
    pub z: Array2<f64>,
    /// Leaf reached by hard routing.
    pub leaves: Vec<NodeId>,
}

fn mean_loss_resolved(
    model: &TreeModel,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    loss: LossKind,
    solver: &SolverConfig,
) -> Result<f64> {
    let n = x.nrows();
    let mut total = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let pass = model.forward::<ChaCha8Rng>(x.slice(s![start..end, ..]), solver, None)?;
        let (l, _) = loss_and_grad(loss, pass.outputs.view(), y.slice(s![start..end, ..]))?;
        total += l * (end - start) as f64;
    }
    Ok(total / n as f64)
}

fn check_data(data: &TrainData) -> Result<()> {
    if data.x_train.nrows() == 0 || data.x_val.nrows() == 0 {
        return Err(Error::Argument("training and validation sets must be non-empty".into()));
    }
    if data.x_train.nrows() != data.y_train.nrows() || data.x_val.nrows() != data.y_val.nrows() {
        return Err(Error::Argument("features and targets have different row counts".into()));
    }
    if data.x_train.ncols() != data.x_val.ncols() || data.y_train.ncols() != data.y_val.ncols() {
        return Err(Error::Argument("training and validation widths differ".into()));
    }
    Ok(())
}

pub fn train(data: TrainData, config: &TrainConfig) -> Result<TrainedModel> {
    train_with(data, config, |_| Ok(()))
}

/// Trains and calls `on_epoch` after every epoch, in order.
pub fn train_with<F>(data: TrainData, config: &TrainConfig, mut on_epoch: F) -> Result<TrainedModel>
where
    F: FnMut(&EpochRecord) -> Result<()>,
{
    config.validate()?;
    check_data(&data)?;
    let solver = config.solver()?;
    let topology = TreeTopology::new(config.depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = TreeModel::new(
        topology,
        data.x_train.ncols(),
        data.y_train.ncols(),
        config.activation,
        &config.predictor,
        &mut rng,
    )?;
    model.splits = init_bias(&model.splits, data.x_train, &topology)?;

    let n = data.x_train.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut lr = config.learning_rate;
    let mut best: Option<(f64, usize, SplitParams, PredictorParams)> = None;
    let (mut since_best, mut since_decay) = (0, 0);
    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut active_sum, mut mean_a_sum) = (0.0, 0.0, 0.0);
        let batches = order.chunks(config.batch_size);
        let num_batches = batches.len();
        for (b, rows) in batches.enumerate() {
            let xb = data.x_train.select(Axis(0), rows);
            let yb = data.y_train.select(Axis(0), rows);
            let pass = model.loss_and_gradient(xb.view(), yb.view(), config.loss, &solver, Some(&mut rng))?;
            let diverged = |message: &str| Error::Training {
                epoch,
                batch: b,
                message: message.into(),
            };
            if !pass.loss.is_finite() {
                return Err(diverged("loss is not finite"));
            }
            let grads = pass.grads.tensors();
            if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(diverged("gradient is not finite"));
            }
            optimizer.step(model.tensors_mut(), grads, lr)?;
            let weight = rows.len() as f64;
            loss_sum += pass.loss * weight;
            active_sum += pass.forward.solution.active_fraction();
            mean_a_sum += pass.forward.solution.a.mean().unwrap_or(0.0);
        }
        let val_loss = mean_loss_resolved(&model, data.x_val, data.y_val, config.loss, &solver)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: num_batches,
                message: "validation loss is not finite".into(),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_loss,
            lr,
            active_node_fraction: active_sum / num_batches as f64,
            mean_a: mean_a_sum / num_batches as f64,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!(
            "epoch {epoch}: train {:.6} val {:.6} lr {lr:e} active {:.3}",
            record.train_loss,
            record.val_loss,
            record.active_node_fraction
        );
        on_epoch(&record)?;
        history.push(record);

        if best.as_ref().is_none_or(|(v, ..)| val_loss < *v) {
            best = Some((val_loss, epoch, model.splits.clone(), model.predictor.clone()));
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_decay >= config.lr_plateau_epochs {
                lr /= config.lr_decay_factor;
                since_decay = 0;
            }
            if since_best >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let (_, best_epoch, splits, predictor) = best.expect("at least one epoch ran");
    model.splits = splits;
    model.predictor = predictor;
    let rewards = model.rewards(data.x_train)?;
    let a_frozen = solver::solve(rewards.q.view(), &solver, &topology)?.a;
    Ok(TrainedModel {
        model,
        a_frozen,
        lambda: config.lambda,
        loss: config.loss,
        standardizer: None,
        history,
        best_epoch,
        stop_reason,
    })
}

impl TrainedModel {
    pub fn infer(&self, x: ArrayView2<f64>, mode: InferenceMode) -> Result<Inference> {
        let (outputs, z) = match mode {
            InferenceMode::Frozen => self.model.forward_frozen(x, self.a_frozen.view())?,
            InferenceMode::Resolve => {
                let pass = self
                    .model
                    .forward::<ChaCha8Rng>(x, &SolverConfig::new(self.lambda)?, None)?;
                (pass.outputs, pass.solution.z)
            }
        };
        Ok(Inference {
            outputs,
            z,
            leaves: self.model.route(x)?,
        })
    }

    /// Mean loss of frozen-pruning predictions.
    pub fn evaluate(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
        let inf = self.infer(x, InferenceMode::Frozen)?;
        Ok(loss_and_grad(self.loss, inf.outputs.view(), y)?.0)
    }

    pub fn active_node_fraction(&self) -> f64 {
        self.a_frozen.iter().filter(|&&a| a > 0.0).count() as f64 / self.a_frozen.len() as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            depth: self.model.topology.depth(),
            lambda: self.lambda,
            loss: self.loss,
            splits: self.model.splits.clone(),
            predictor: self.model.predictor.clone(),
            dropout_placement: "after_every_hidden_activation".into(),
            a_frozen: self.a_frozen.clone(),
            standardizer: self.standardizer.clone(),
            best_epoch: self.best_epoch,
            stop_reason: self.stop_reason,
            history: self.history.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::Argument(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
                c.format_version
            )));
        }
        let topology = TreeTopology::new(c.depth)?;
        if c.splits.weights.nrows() != topology.num_branching()
            || c.a_frozen.len() != topology.num_nodes()
            || c.predictor.tree_nodes != topology.num_nodes()
        {
            return Err(Error::Argument("checkpoint shapes do not match its depth".into()));
        }
        Ok(Self {
            model: TreeModel {
                topology,
                splits: c.splits,
                predictor: c.predictor,
            },
            a_frozen: c.a_frozen,
            lambda: c.lambda,
            loss: c.loss,
            standardizer: c.standardizer,
            history: c.history,
            best_epoch: c.best_epoch,
            stop_reason: c.stop_reason,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_checkpoint(serde_json::from_reader(file)?)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub depth: usize,
    pub lambda: f64,
    pub loss: LossKind,
    pub splits: SplitParams,
    pub predictor: PredictorParams,
    pub dropout_placement: String,
    pub a_frozen: Array1<f64>,
    pub standardizer: Option<Standardizer>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub history: Vec<EpochRecord>,
}

/// Fraction of rows whose thresholded logit disagrees with a 0/1 target.
pub fn error_rate(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    if logits.dim() != targets.dim() || logits.is_empty() {
        return Err(Error::Argument(
            "logits and targets must have the same non-empty shape".into(),
        ));
    }
    let wrong = logits
        .iter()
        .zip(targets.iter())
        .filter(|(&l, &y)| (l > 0.0) != (y > 0.5))
        .count();
    Ok(wrong as f64 / logits.len() as f64)
}
