//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    /// Adam with its customary defaults and a learning rate of 0.001.
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return invalid(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return invalid(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return invalid("epsilon must be positive");
        }
        Ok(())
    }
}

/// Stateful optimizer bound to one [`ParamStore`] layout.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    cfg: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, step: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable tensor using its accumulated
    /// gradient. Gradients are left in place; call `zero_grad` afterwards.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if params.iter().all(|p| p.tensor.grad().is_none()) {
            return Err(Error::MissingGradients);
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return invalid("optimizer state does not match parameter layout");
        }
        self.step += 1;
        let lr = T::c(self.cfg.learning_rate);
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let Some(g) = p.tensor.grad().map(<[T]>::to_vec) else { continue };
                    for (w, gv) in p.tensor.data_mut().iter_mut().zip(g) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::c(self.cfg.beta1), T::c(self.cfg.beta2));
                let eps = T::c(self.cfg.epsilon);
                let t = self.step as i32;
                let bias1 = T::one() - b1.powi(t);
                let bias2 = T::one() - b2.powi(t);
                for (idx, p) in params.iter_mut().enumerate() {
                    let Some(g) = p.tensor.grad().map(<[T]>::to_vec) else { continue };
                    let (m, v) = (&mut self.first[idx], &mut self.second[idx]);
                    for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
                        m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                        v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                        let m_hat = m[k] / bias1;
                        let v_hat = v[k] / bias2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
