use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with a learning-rate multiplier per parameter group.
pub struct Adam {
    cfg: AdamConfig,
    multipliers: BTreeMap<String, f64>,
    moments: BTreeMap<String, (Tensor, Tensor)>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            multipliers: BTreeMap::new(),
            moments: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn set_multiplier(&mut self, group: &str, m: f64) -> Result<()> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Config(format!("learning-rate multiplier for '{group}' must be positive")));
        }
        self.multipliers.insert(group.to_string(), m);
        Ok(())
    }

    pub fn multiplier(&self, group: &str) -> f64 {
        self.multipliers.get(group).copied().unwrap_or(1.0)
    }

    /// Group → multiplier for every group in `store`.
    pub fn group_report(&self, store: &ParamStore) -> BTreeMap<String, f64> {
        store.groups().into_iter().map(|g| {
            let m = self.multiplier(&g);
            (g, m)
        }).collect()
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update with base learning rate `lr`. Returns the global
    /// gradient norm before clipping.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<f64> {
        let mut present = Vec::new();
        let mut sq = 0.0;
        for (name, var) in store.vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                // Gradients carry their op graph; detach so moments never retain it.
                present.push((name.to_string(), var, g.detach()));
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("gradient norm is {norm}")));
        }
        let scale = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, var, g) in present {
            let g = if scale != 1.0 { (g * scale)? } else { g };
            let (m, v) = match self.moments.remove(&name) {
                Some(s) => s,
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = ((m * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let group_lr = lr * self.multiplier(ParamStore::group_of(&name));
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.cfg.eps)?)?;
            let new = (var.as_tensor().detach() - (update * group_lr)?)?;
            var.set(&new)?;
            self.moments.insert(name, (m, v));
        }
        Ok(norm)
    }
}
