use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean squared error over all output entries.
    Mse,
    /// Mean logistic loss; outputs are logits, targets are 0 or 1.
    Bce,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean loss and its gradient with respect to `outputs`.
pub fn loss_and_grad(kind: LossKind, outputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if outputs.dim() != targets.dim() {
        return Err(Error::Argument(format!(
            "outputs have shape {:?}, targets {:?}",
            outputs.dim(),
            targets.dim()
        )));
    }
    let count = outputs.len().max(1) as f64;
    match kind {
        LossKind::Mse => {
            let diff = &outputs - &targets;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
            Ok((loss, diff * (2.0 / count)))
        }
        LossKind::Bce => {
            if let Some(bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
                return Err(Error::Argument(format!(
                    "binary cross-entropy targets must be 0 or 1, got {bad}"
                )));
            }
            let loss = outputs
                .iter()
                .zip(targets.iter())
                .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
                .sum::<f64>()
                / count;
            let mut grad = outputs.mapv(sigmoid);
            grad -= &targets;
            grad /= count;
            Ok((loss, grad))
        }
    }
}
