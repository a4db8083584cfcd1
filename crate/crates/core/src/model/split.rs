use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::compute_rewards;
use crate::tree::TreeTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => elu(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Split functions `s_t(x) = act(w_t · x) + b_t`, one row per branching node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SplitCache {
    pub pre: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SplitParams {
    /// Weights uniform in `[-1/√d, 1/√d]`, zero biases.
    pub fn init<R: Rng>(topology: &TreeTopology, features: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (features.max(1) as f64).sqrt();
        let weights = Array2::from_shape_fn((topology.num_branching(), features), |_| rng.gen_range(-bound..=bound));
        Self {
            weights,
            bias: Array1::zeros(topology.num_branching()),
            activation,
        }
    }

    pub fn num_features(&self) -> usize {
        self.weights.ncols()
    }

    fn check_width(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.weights.ncols() {
            return Err(Error::Argument(format!(
                "input has {} features, split functions expect {}",
                x.ncols(),
                self.weights.ncols()
            )));
        }
        Ok(())
    }

    /// `act(w_t · x_i)` without the bias.
    pub fn pre_bias_values(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let mut out = x.dot(&self.weights.t());
        out.mapv_inplace(|v| self.activation.apply(v));
        Ok(out)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, SplitCache)> {
        self.check_width(x)?;
        let pre = x.dot(&self.weights.t());
        let mut values = pre.mapv(|v| self.activation.apply(v));
        values += &self.bias;
        Ok((values, SplitCache { pre }))
    }

    pub fn values(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&self, x: ArrayView2<f64>, cache: &SplitCache, grad_s: ArrayView2<f64>) -> SplitGrads {
        let mut grad_pre = grad_s.to_owned();
        if self.activation != Activation::Identity {
            grad_pre.zip_mut_with(&cache.pre, |g, &p| *g *= self.activation.derivative(p));
        }
        SplitGrads {
            weights: grad_pre.t().dot(&x).as_standard_layout().into_owned(),
            bias: grad_s.sum_axis(Axis(0)),
        }
    }
}

/// Sets each bias so that the points reaching a node are split around their
/// mean pre-bias value. Nodes are processed level by level, so a node's
/// reachability uses the biases already chosen for its ancestors. Nodes that
/// no point reaches keep a zero bias. Weights are left untouched.
pub fn init_bias(params: &SplitParams, x: ArrayView2<f64>, topology: &TreeTopology) -> Result<SplitParams> {
    if x.nrows() == 0 {
        return Err(Error::Argument("bias initialization needs at least one point".into()));
    }
    let pre = params.pre_bias_values(x)?;
    let mut out = params.clone();
    out.bias.fill(0.0);
    for level in 0..topology.depth() {
        let mut splits = pre.clone();
        splits += &out.bias;
        let q = compute_rewards(splits.view(), topology)?.q;
        for t in (1 << level)..(1 << (level + 1)) {
            let (count, sum) = (0..x.nrows())
                .filter(|&i| q[[i, t - 1]] > 0.0)
                .fold((0usize, 0.0), |(c, s), i| (c + 1, s + pre[[i, t - 1]]));
            out.bias[t - 1] = if count == 0 { 0.0 } else { -sum / count as f64 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::standard_normal;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> SplitParams {
        SplitParams {
            weights,
            bias,
            activation,
        }
    }

    #[test]
    fn forward_examples() {
        let p = params(Array2::zeros((3, 2)), Array1::zeros(3), Activation::Identity);
        assert_eq!(
            p.values(array![[1.0, 2.0]].view()).unwrap(),
            Array2::<f64>::zeros((1, 3))
        );

        let p = params(array![[1.0, -1.0]], array![0.5], Activation::Identity);
        assert_eq!(p.values(array![[2.0, 1.0]].view()).unwrap(), array![[1.5]]);

        let p = params(array![[1.0]], array![0.0], Activation::Elu);
        let s = p.values(array![[-1.0]].view()).unwrap()[[0, 0]];
        assert!((s - (-0.6321205588285577)).abs() < 1e-12);

        assert!(p.values(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let topo = TreeTopology::new(2).unwrap();
        let x = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let upstream = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        for act in [Activation::Identity, Activation::Elu] {
            let p = SplitParams::init(&topo, 3, act, &mut rng);
            let (_, cache) = p.forward(x.view()).unwrap();
            let g = p.backward(x.view(), &cache, upstream.view());
            let f = |p: &SplitParams| (p.values(x.view()).unwrap() * &upstream).sum();
            let h = 1e-6;
            for idx in ndarray::indices(p.weights.dim()) {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                plus.weights[idx] += h;
                minus.weights[idx] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!((fd - g.weights[idx]).abs() < 1e-6);
            }
            for t in 0..3 {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                plus.bias[t] += h;
                minus.bias[t] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!((fd - g.bias[t]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn root_bias_is_negated_mean() {
        let topo = TreeTopology::new(1).unwrap();
        let p = params(array![[1.0]], array![0.0], Activation::Identity);
        let out = init_bias(&p, array![[0.2], [0.4]].view(), &topo).unwrap();
        assert!((out.bias[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn unreached_node_keeps_zero_bias() {
        // Every point goes left at the root, so node 3 sees nobody.
        let topo = TreeTopology::new(2).unwrap();
        let p = params(array![[1.0], [1.0], [1.0]], Array1::zeros(3), Activation::Identity);
        let x = array![[1.0], [1.0], [1.0]];
        let out = init_bias(&p, x.view(), &topo).unwrap();
        assert_eq!(out.bias[0], -1.0);
        // s_1 = 0 for all points, so they route right (q_3 = 0 is not > 0)
        // and neither child is reached.
        assert_eq!(out.bias[1], 0.0);
        assert_eq!(out.bias[2], 0.0);
        assert!(init_bias(&p, Array2::zeros((0, 1)).view(), &topo).is_err());
    }

    #[test]
    fn init_bias_balances_root_children() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let topo = TreeTopology::new(3).unwrap();
        let n = 256;
        let x = Array2::from_shape_fn((n, 4), |_| standard_normal(&mut rng));
        let p = SplitParams::init(&topo, 4, Activation::Identity, &mut rng);
        let out = init_bias(&p, x.view(), &topo).unwrap();
        assert_eq!(out.weights, p.weights);
        let s = out.values(x.view()).unwrap();
        let left = s.column(0).iter().filter(|&&v| v < 0.0).count();
        let right = n - left;
        // The mean split of symmetric data lands close to the median.
        assert!(left.min(right) >= n / 2 - 20, "left {left} right {right}");
    }
}
