use alloc::format;
use alloc::vec::Vec;

use super::{GradMap, ParamStore};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are aligned with the store entries;
/// non-trainable entries keep zero moments and are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", config.lr)));
        }
        let zeros = || store.iter().map(|p| Matrix::zeros(p.value().rows(), p.value().cols())).collect();
        Ok(Adam { config, t: 0, m: zeros(), v: zeros() })
    }

    /// Restores saved optimizer state.
    pub fn from_parts(config: AdamConfig, t: u64, m: Vec<Matrix>, v: Vec<Matrix>) -> Self {
        Adam { config, t, m, v }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::contract("optimizer state does not match the parameter store"));
        }
        for id in store.ids() {
            let shape = store.get(id).shape();
            if grads.get(id).shape() != shape || self.m[id.0].shape() != shape {
                return Err(Error::contract(format!("shape mismatch for `{}`", store.name(id))));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for id in store.ids() {
            if !store.param(id).trainable() {
                continue;
            }
            let g = grads.get(id).data();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let w = store.value_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for m in self.m.iter_mut().chain(self.v.iter_mut()) {
            m.round_to_f32();
        }
    }
}
