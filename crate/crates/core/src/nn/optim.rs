use serde::{Deserialize, Serialize};

use super::encoder::{check_same_shape, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub probe_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 200,
            probe_epochs: 100,
            batch_size: 256,
            base_lr: 1e-3,
            min_lr: 0.0,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            warmup_epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pretrain_epochs == 0 || self.probe_epochs == 0 {
            return Err(Error::invalid("epoch counts must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.base_lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.base_lr {
            return Err(Error::invalid("need 0 <= min_lr <= base_lr and base_lr > 0"));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("weight decay must be >= 0 and clip norm > 0"));
        }
        if self.warmup_epochs >= self.pretrain_epochs {
            return Err(Error::invalid(format!(
                "warmup_epochs {} must be below pretrain_epochs {}",
                self.warmup_epochs, self.pretrain_epochs
            )));
        }
        Ok(())
    }

    pub fn pretrain_schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.base_lr,
            min_lr: self.min_lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.pretrain_epochs,
        }
    }

    /// The probe runs a plain cosine decay without warmup.
    pub fn probe_schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.base_lr,
            min_lr: self.min_lr,
            warmup_epochs: 0,
            total_epochs: self.probe_epochs,
        }
    }
}

/// Per-epoch learning rate: linear warmup then cosine decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

/// `base·epoch/warmup` during warmup, then
/// `η_min + ½(η_max − η_min)(1 + cos(tπ/T))` with `t` counted from the end of
/// warmup and `T = total − warmup`. Epochs past the end give `η_min`.
pub fn lr_at(epoch: usize, schedule: &Schedule) -> f64 {
    let Schedule {
        base_lr,
        min_lr,
        warmup_epochs,
        total_epochs,
    } = *schedule;
    if epoch < warmup_epochs {
        return base_lr * epoch as f64 / warmup_epochs as f64;
    }
    if epoch >= total_epochs {
        return min_lr;
    }
    let t = (epoch - warmup_epochs) as f64;
    let span = (total_epochs - warmup_epochs) as f64;
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (t * std::f64::consts::PI / span).cos())
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// Clip, decay, then Adam. Returns the gradient norm before clipping.
///
/// Gradients are rescaled to global norm `clip_norm` if larger; weights (not
/// biases) are shrunk by `lr·weight_decay` independently of the moments.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut OptimState,
    lr: f64,
    config: &TrainConfig,
) -> Result<f64> {
    check_same_shape(params, grads)?;
    check_same_shape(params, &state.m)?;
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical {
            anchor: 0,
            what: "non-finite parameter gradient".into(),
        });
    }
    let clip = if norm > config.clip_norm {
        config.clip_norm / norm
    } else {
        1.0
    };
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut())
        .zip(state.v.layers.iter_mut())
    {
        p.weight.mapv_inplace(|w| w - lr * config.weight_decay * w);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            let g = g * clip;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        ndarray::Zip::from(&mut p.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(norm)
}
