use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::{elu, Activation};
use crate::error::{Error, Result};

/// What the predictor sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `[x ; z]`
    #[default]
    Concat,
    /// `z` only.
    TreeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((outputs, inputs), |_| rng.gen_range(-bound..=bound)),
            bias: Array1::from_shape_fn(outputs, |_| rng.gen_range(-bound..=bound)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// A stack of fully connected layers. One layer is a linear predictor;
/// more layers put ELU then dropout after every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub input: InputMode,
    /// Width of the traversal block at the end of the input.
    pub tree_nodes: usize,
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub input: InputMode,
    /// Number of fully connected layers (1 = linear).
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self {
            input: InputMode::Concat,
            layers: 1,
            hidden: 64,
            dropout: 0.0,
        }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("layers", "the predictor needs at least one layer"));
        }
        if self.layers > 1 && self.hidden == 0 {
            return Err(Error::config("hidden", "hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PredictorCache {
    /// Input to every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    hidden_pre: Vec<Array2<f64>>,
    /// Scaled keep-masks of every hidden layer (empty when dropout is off).
    masks: Vec<Option<Array2<f64>>>,
}

impl PredictorParams {
    pub fn init<R: Rng>(
        spec: &PredictorSpec,
        features: usize,
        nodes: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let width = match spec.input {
            InputMode::Concat => features + nodes,
            InputMode::TreeOnly => nodes,
        };
        let mut layers = Vec::with_capacity(spec.layers);
        let mut fan_in = width;
        for l in 0..spec.layers {
            let fan_out = if l + 1 == spec.layers { outputs } else { spec.hidden };
            layers.push(Dense::init(fan_in, fan_out, rng));
            fan_in = fan_out;
        }
        Ok(Self {
            input: spec.input,
            tree_nodes: nodes,
            layers,
            dropout: spec.dropout,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input,
            tree_nodes: self.tree_nodes,
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            dropout: self.dropout,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn compose(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != z.nrows() {
            return Err(Error::Argument(format!(
                "{} feature rows but {} traversal rows",
                x.nrows(),
                z.nrows()
            )));
        }
        let input = match self.input {
            InputMode::Concat => concatenate(Axis(1), &[x, z]).expect("row counts checked"),
            InputMode::TreeOnly => z.to_owned(),
        };
        if input.ncols() != self.input_width() {
            return Err(Error::Argument(format!(
                "predictor input has width {}, expected {}",
                input.ncols(),
                self.input_width()
            )));
        }
        Ok(input)
    }

    /// Dropout is applied only when `rng` is given.
    pub fn forward<R: Rng>(
        &self,
        x: ArrayView2<f64>,
        z: ArrayView2<f64>,
        mut rng: Option<&mut R>,
    ) -> Result<(Array2<f64>, PredictorCache)> {
        let mut h = self.compose(x, z)?;
        let mut cache = PredictorCache {
            inputs: Vec::with_capacity(self.layers.len()),
            hidden_pre: Vec::new(),
            masks: Vec::new(),
        };
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = h.dot(&layer.weight.t());
            out += &layer.bias;
            cache.inputs.push(h);
            if l == last {
                return Ok((out, cache));
            }
            let mut act = out.mapv(elu);
            cache.hidden_pre.push(out);
            let mask =
                match rng.as_deref_mut() {
                    Some(rng) if self.dropout > 0.0 => {
                        let keep = 1.0 - self.dropout;
                        let mask = Array2::from_shape_fn(act.raw_dim(), |_| {
                            if rng.gen::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        act *= &mask;
                        Some(mask)
                    }
                    _ => None,
                };
            cache.masks.push(mask);
            h = act;
        }
        unreachable!("the last layer returns")
    }

    /// Returns parameter gradients and the gradient with respect to `z`.
    pub fn backward(&self, cache: &PredictorCache, grad_out: ArrayView2<f64>) -> (PredictorParams, Array2<f64>) {
        let mut grads = self.zeros_like();
        let mut g = grad_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            grads.layers[l].weight = g.t().dot(&cache.inputs[l]).as_standard_layout().into_owned();
            grads.layers[l].bias = g.sum_axis(Axis(0));
            let mut below = g.dot(&layer.weight);
            if l > 0 {
                if let Some(mask) = &cache.masks[l - 1] {
                    below *= mask;
                }
                below.zip_mut_with(&cache.hidden_pre[l - 1], |v, &p| *v *= Activation::Elu.derivative(p));
            }
            g = below;
        }
        let grad_z = g.slice(ndarray::s![.., g.ncols() - self.tree_nodes..]).to_owned();
        (grads, grad_z)
    }
}
