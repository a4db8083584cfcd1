//! Seeded synthetic datasets.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ColumnKind, Dataset};

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_features<R: Rng>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| standard_normal(rng))
}

fn numeric(x: Array2<f64>, y: Array1<f64>, target: &str) -> Dataset {
    let d = x.ncols();
    Dataset {
        feature_names: (0..d).map(|j| format!("x{j}")).collect(),
        feature_kinds: vec![ColumnKind::Numeric; d],
        x,
        target_name: Some(target.to_string()),
        y: Some(y),
        encodings: Default::default(),
    }
}

/// Binary target `1[x_0 > 0]` over Gaussian features.
pub fn threshold_classification<R: Rng>(n: usize, d: usize, rng: &mut R) -> Dataset {
    let x = gaussian_features(n, d.max(1), rng);
    let y = x.column(0).mapv(|v| f64::from(u8::from(v > 0.0)));
    numeric(x, y, "label")
}

/// Piecewise-constant target of the first two features plus Gaussian noise
/// with standard deviation 0.1.
pub fn piecewise_regression<R: Rng>(n: usize, d: usize, rng: &mut R) -> Dataset {
    let x = gaussian_features(n, d.max(2), rng);
    let y = Array1::from_shape_fn(n, |i| {
        let (a, b) = (x[[i, 0]], x[[i, 1]]);
        let level = if a > 0.0 { 2.0 } else { -1.0 } + if b > 0.5 { 1.0 } else { 0.0 };
        level + 0.1 * standard_normal(rng)
    });
    numeric(x, y, "target")
}
