use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam without weight decay. Moments are keyed by parameter name so the
/// state can be checkpointed and restored.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Apply one update to every trainable parameter that received a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<StepStats> {
        let mut sq = 0.0f64;
        let mut present = Vec::new();
        for p in params.trainable() {
            if let Some(g) = grads.get(p.var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                present.push((p, g.clone()));
            }
        }
        let grad_norm = sq.sqrt();
        let scale = match self.config.clip_norm {
            Some(max) if grad_norm > max => max / (grad_norm + 1e-6),
            _ => 1.0,
        };
        self.step += 1;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (p, g) in present {
            let g = (g * scale)?;
            let (m, v) = match self.moments.get(&p.name) {
                Some((m, v)) => ((m * b1)? + (&g * (1.0 - b1))?, (v * b2)? + (g.sqr()? * (1.0 - b2))?),
                None => (&g * (1.0 - b1), g.sqr()? * (1.0 - b2)),
            };
            let (m, v) = (m?, v?);
            let denom = ((&v / bc2)?.sqrt()? + self.config.eps)?;
            let update = ((&m / bc1)? / denom)?;
            let next = (p.var.as_tensor() - (update * lr)?)?;
            p.var.set(&next)?;
            self.moments.insert(p.name.clone(), (m, v));
        }
        Ok(StepStats {
            grad_norm,
            clipped: scale < 1.0,
        })
    }
}
