//! Bias-corrected Adam, cosine-annealed learning rate, global-norm clipping.

use std::path::Path;

use burstkit_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::params::ParamStore;

/// `min + (base - min) (1 + cos(pi step / total)) / 2`; `min` past the end.
pub fn cosine_lr(step: u64, total: u64, base: f64, min: f64) -> f64 {
    if total == 0 || step >= total {
        return min;
    }
    let t = step as f64 / total as f64;
    min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr: 1e-4,
            min_lr: 1e-6,
            total_steps: 1000,
        }
    }
}

impl AdamConfig {
    pub fn lr(&self, step: u64) -> f64 {
        cosine_lr(step, self.total_steps, self.base_lr, self.min_lr)
    }
}

/// Moment buffers named after the parameters they track.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub config: AdamConfig,
    pub m: ParamStore<f64>,
    pub v: ParamStore<f64>,
    /// Completed updates.
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ParamStore<f64>, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.m.save(&dir.join("m"))?;
        self.v.save(&dir.join("v"))
    }

    pub fn load(&mut self, dir: &Path, step: u64) -> Result<()> {
        self.m.load(&dir.join("m"))?;
        self.v.load(&dir.join("v"))?;
        self.step = step;
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &[Tensor<f64>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales so the global norm is at most `max_norm`; returns the norm before.
pub fn clip_grad_norm(grads: &mut [Tensor<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One Adam update at the scheduled learning rate; returns that rate.
pub fn adam_step(params: &mut ParamStore<f64>, grads: &[Tensor<f64>], state: &mut OptimState) -> Result<f64> {
    if grads.len() != params.len() {
        bail!(Contract, "{} gradients for {} parameters", grads.len(), params.len());
    }
    for (g, (name, p)) in grads.iter().zip(params.iter()) {
        if g.shape() != p.shape() {
            bail!(Contract, "gradient for {name} has shape {:?}, expected {:?}", g.shape(), p.shape());
        }
        if !g.is_finite() {
            bail!(Numeric, "non-finite gradient for {name} at step {}", state.step);
        }
    }
    let cfg = state.config;
    let lr = cfg.lr(state.step);
    let t = state.step as i32 + 1;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m.values_mut()[i].data_mut();
        for (mk, gk) in m.iter_mut().zip(g.data()) {
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * gk;
        }
        let v = state.v.values_mut()[i].data_mut();
        for (vk, gk) in v.iter_mut().zip(g.data()) {
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * gk * gk;
        }
        let (m, v) = (state.m.values()[i].data(), state.v.values()[i].data());
        let p = params.values_mut()[i].data_mut();
        for k in 0..p.len() {
            p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
        }
    }
    state.step += 1;
    Ok(lr)
}
