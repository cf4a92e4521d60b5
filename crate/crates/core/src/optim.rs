//! Adam with bias correction and the step learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the shared step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Zero moments shaped like `store`.
    pub fn for_store(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = store.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One in-place Adam update on a flat slice at (1-based) step `t`.
pub fn adam_update(cfg: &AdamConfig, t: u64, lr: f32, p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]) {
    let t = t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - Float::powi(cfg.beta1, t);
    let c2 = 1.0 - Float::powi(cfg.beta2, t);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= lr * mh / (Float::sqrt(vh) + cfg.eps);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self {
            config,
            state: AdamState::for_store(store),
        }
    }

    /// Apply `grads` (one vector per parameter, declaration order). Every
    /// gradient is checked before anything is written, so a non-finite value
    /// leaves parameters and state untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f32>], lr: f32) -> Result<()> {
        let params = store.params();
        if grads.len() != params.len() || self.state.m.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} parameters, {} gradients, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.state.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if g.len() != p.data.len() || self.state.m[i].len() != p.data.len() {
                return Err(Error::shape(
                    "adam",
                    format!("`{}` has {} values, gradient has {}", p.name, p.data.len(), g.len()),
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { param: p.name.clone() });
            }
        }
        self.state.step += 1;
        let t = self.state.step;
        for (i, g) in grads.iter().enumerate() {
            let p = store.data_mut(i);
            adam_update(&self.config, t, lr, p, g, &mut self.state.m[i], &mut self.state.v[i]);
        }
        Ok(())
    }
}

/// Learning rate for 1-based `epoch`: halved every `every` epochs.
pub fn lr_at_epoch(lr0: f32, epoch: usize, every: usize) -> f32 {
    let k = epoch.saturating_sub(1) / every.max(1);
    lr0 * Float::powi(0.5f32, k.min(i32::MAX as usize) as i32)
}
