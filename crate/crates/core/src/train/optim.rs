use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    QhAdam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of the momentum term in the quasi-hyperbolic numerator.
    /// Ignored by Adam.
    pub nu1: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            nu1: 1.0,
            eps: 1e-8,
        }
    }

    pub fn qhadam() -> Self {
        Self {
            kind: OptimizerKind::QhAdam,
            beta1: 0.995,
            beta2: 0.999,
            nu1: 0.7,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.nu1) {
            return Err(Error::config("nu1", "must lie in [0, 1]"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::qhadam()
    }
}

/// Adam and quasi-hyperbolic Adam with `ν2 = 1` over a flat list of tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(&grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Argument("parameter and gradient shapes differ".into()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(&grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::Argument("gradient shapes changed between steps".into()));
        }
        self.steps += 1;
        let c = &self.config;
        let correct1 = 1.0 - c.beta1.powi(self.steps);
        let correct2 = 1.0 - c.beta2.powi(self.steps);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = m[j] / correct1;
                let v_hat = v[j] / correct2;
                let numerator = match c.kind {
                    OptimizerKind::Adam => m_hat,
                    OptimizerKind::QhAdam => (1.0 - c.nu1) * g[j] + c.nu1 * m_hat,
                };
                p[j] -= lr * numerator / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
