use std::collections::{BTreeMap, HashMap};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AdamW with per-parameter step counts, so parameters that sit out a step
/// (encoders of absent modalities) keep consistent bias correction.
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub first: HashMap<String, Tensor>,
    pub second: HashMap<String, Tensor>,
    pub steps: BTreeMap<String, u64>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            first: HashMap::new(),
            second: HashMap::new(),
            steps: BTreeMap::new(),
        }
    }

    /// Update every parameter that has an entry in `grads`.
    pub fn step(&mut self, params: &ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let c = &self.cfg;
        for (name, g) in grads {
            let var = params
                .get(name)
                .ok_or_else(|| Error::Internal(format!("gradient for unknown parameter {name}")))?;
            let t = self.steps.get(name).copied().unwrap_or(0) + 1;
            let m = match self.first.get(name) {
                Some(prev) => ((prev * c.beta1)? + (g * (1.0 - c.beta1))?)?,
                None => (g * (1.0 - c.beta1))?,
            };
            let v = match self.second.get(name) {
                Some(prev) => ((prev * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                None => (g.sqr()? * (1.0 - c.beta2))?,
            };
            let m_hat = (&m / (1.0 - c.beta1.powi(t as i32)))?;
            let v_hat = (&v / (1.0 - c.beta2.powi(t as i32)))?;
            let update = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            let theta = var.as_tensor();
            let next = ((theta * (1.0 - c.lr * c.weight_decay))? - (update * c.lr)?)?;
            var.set(&next)?;
            self.first.insert(name.clone(), m);
            self.second.insert(name.clone(), v);
            self.steps.insert(name.clone(), t);
        }
        Ok(())
    }
}
