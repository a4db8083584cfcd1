//! End-to-end runs: split, z-score on the training rows, train, and score
//! the held-out rows.

use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::{collapse_to_active, dendrogram_purity, make_self_supervised};
use crate::data::{split_dataset, Dataset, SplitIndices, Standardizer};
use crate::error::{Error, Result};
use crate::model::LossKind;
use crate::train::{
    error_rate, train_with, EpochRecord, InferenceMode, StopReason, TrainConfig, TrainData, TrainedModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Real target, MSE.
    Reg,
    /// 0/1 target, logistic loss on a single logit.
    Cls,
    /// Regress some feature columns from the others; the target column only
    /// labels points for dendrogram purity.
    Cluster,
}

impl Task {
    pub fn loss(self) -> LossKind {
        match self {
            Task::Cls => LossKind::Bce,
            Task::Reg | Task::Cluster => LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub task: Task,
    /// Feature columns regressed in the clustering task.
    pub target_columns: Vec<usize>,
    pub fractions: [f64; 3],
    /// Seeds the split; training uses the seed of the training config.
    pub split_seed: u64,
}

impl ExperimentSpec {
    pub fn new(task: Task, split_seed: u64) -> Self {
        Self {
            task,
            target_columns: Vec::new(),
            fractions: [0.6, 0.2, 0.2],
            split_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub task: Task,
    pub test_loss: f64,
    pub test_mse: Option<f64>,
    pub test_error_rate: Option<f64>,
    /// Over every row of the dataset, each point placed at its routed leaf
    /// collapsed to the deepest active ancestor.
    pub dendrogram_purity: Option<f64>,
    pub active_node_fraction: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_rows: usize,
    pub stratified: bool,
    pub split_warning: Option<String>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub trained: TrainedModel,
    pub split: SplitIndices,
    pub summary: Summary,
}

pub fn run(dataset: &Dataset, spec: &ExperimentSpec, config: &TrainConfig) -> Result<Outcome> {
    run_with(dataset, spec, config, |_| Ok(()))
}

/// Like [`run`], calling `on_epoch` after every training epoch.
pub fn run_with<F>(dataset: &Dataset, spec: &ExperimentSpec, config: &TrainConfig, on_epoch: F) -> Result<Outcome>
where
    F: FnMut(&EpochRecord) -> Result<()>,
{
    let started = Instant::now();
    let config = TrainConfig {
        loss: spec.task.loss(),
        ..config.clone()
    };
    config.validate()?;
    let labels = match spec.task {
        Task::Reg => None,
        Task::Cls | Task::Cluster => Some(dataset.labels()?),
    };
    if spec.task == Task::Cls && labels.as_ref().is_some_and(|l| l.iter().any(|&c| c > 1)) {
        return Err(Error::Argument("classification needs a 0/1 target".into()));
    }
    let split = split_dataset(dataset.len(), labels.as_deref(), spec.fractions, spec.split_seed)?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Argument(format!(
            "{} rows are too few for a three-way split",
            dataset.len()
        )));
    }
    let standardizer = Standardizer::fit(dataset.x.select(Axis(0), &split.train).view())?;
    let x_all = standardizer.transform(dataset.x.view())?;
    let (inputs, targets): (Array2<f64>, Array2<f64>) = match spec.task {
        Task::Cluster => make_self_supervised(x_all.view(), &spec.target_columns)?,
        Task::Reg | Task::Cls => (x_all, dataset.targets()?),
    };
    let rows = |idx: &[usize]| (inputs.select(Axis(0), idx), targets.select(Axis(0), idx));
    let (x_train, y_train) = rows(&split.train);
    let (x_val, y_val) = rows(&split.val);
    let (x_test, y_test) = rows(&split.test);
    let data = TrainData {
        x_train: x_train.view(),
        y_train: y_train.view(),
        x_val: x_val.view(),
        y_val: y_val.view(),
    };
    let mut trained = train_with(data, &config, on_epoch)?;
    trained.standardizer = Some(standardizer);

    let test = trained.infer(x_test.view(), InferenceMode::Frozen)?;
    let test_loss = crate::model::loss_and_grad(config.loss, test.outputs.view(), y_test.view())?.0;
    let test_error_rate = match spec.task {
        Task::Cls => Some(error_rate(test.outputs.view(), y_test.view())?),
        _ => None,
    };
    let dp = match spec.task {
        Task::Cluster => {
            let leaves: Vec<usize> = trained
                .model
                .route(inputs.view())?
                .into_iter()
                .map(|leaf| collapse_to_active(leaf, trained.a_frozen.view()))
                .collect();
            Some(dendrogram_purity(
                &leaves,
                labels.as_deref().expect("clustering has labels"),
                &trained.model.topology,
            )?)
        }
        _ => None,
    };
    let summary = Summary {
        task: spec.task,
        test_loss,
        test_mse: (config.loss == LossKind::Mse).then_some(test_loss),
        test_error_rate,
        dendrogram_purity: dp,
        active_node_fraction: trained.active_node_fraction(),
        epochs_run: trained.history.len(),
        best_epoch: trained.best_epoch,
        stop_reason: trained.stop_reason,
        train_rows: split.train.len(),
        val_rows: split.val.len(),
        test_rows: split.test.len(),
        stratified: split.stratified,
        split_warning: split.warning.clone(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok(Outcome {
        trained,
        split,
        summary,
    })
}
