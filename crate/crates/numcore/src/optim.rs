use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::params::{Moments, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(NumError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.kind == OptimizerKind::Adam {
            let in_unit = |b: f64| (0.0..1.0).contains(&b);
            if !in_unit(self.beta1) || !in_unit(self.beta2) {
                return Err(NumError::Config(format!(
                    "adam betas must lie in [0, 1), got ({}, {})",
                    self.beta1, self.beta2
                )));
            }
            if !(self.eps > 0.0) {
                return Err(NumError::Config(format!("adam eps must be positive, got {}", self.eps)));
            }
        }
        Ok(())
    }
}

/// Applies one update to every trainable parameter from its accumulated
/// gradient. Gradients are left in place.
pub fn optimizer_step<T: Scalar>(store: &mut ParamStore<T>, config: &OptimizerConfig) -> Result<()> {
    config.validate()?;
    store.step += 1;
    let t = store.step as i32;
    let lr = config.lr;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let entry = store.entry_mut(id);
        if !entry.trainable {
            continue;
        }
        let mut value = entry.value.to_vec();
        match config.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64_lossy(lr);
                for (w, &g) in value.iter_mut().zip(&entry.grad) {
                    *w = *w - lr * g;
                }
            }
            OptimizerKind::Adam => {
                let n = value.len();
                let moments = entry.moments.get_or_insert_with(|| Moments {
                    first: vec![T::zero(); n],
                    second: vec![T::zero(); n],
                });
                let (b1, b2) = (config.beta1, config.beta2);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let (b1t, b2t) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
                let (c1t, c2t) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
                let (lrt, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(config.eps));
                for (k, (w, &g)) in value.iter_mut().zip(&entry.grad).enumerate() {
                    let m = b1t * moments.first[k] + (T::one() - b1t) * g;
                    let v = b2t * moments.second[k] + (T::one() - b2t) * g * g;
                    moments.first[k] = m;
                    moments.second[k] = v;
                    let mhat = m / c1t;
                    let vhat = v / c2t;
                    *w = *w - lrt * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        let shape = entry.value.shape().to_vec();
        entry.value = crate::Tensor::new(shape, value)?;
    }
    Ok(())
}
