use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::error::{NnError, Result};
use super::params::ParamStore;
use super::tape::ParamGrads;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Adam with bias correction. Moments are created lazily and only for
/// parameters that are trainable and actually received a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    pub(crate) moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts(config: AdamConfig, step: u64, moments: BTreeMap<String, Moments>) -> Self {
        Self { config, step, moments }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn has_moments(&self, name: &str) -> bool {
        self.moments.contains_key(name)
    }

    pub fn num_moment_tensors(&self) -> usize {
        self.moments.len()
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &ParamGrads<f32>) -> Result<()> {
        for id in grads.ids() {
            let p = store.get(id);
            if p.trainable && !grads.get(id).is_some_and(|g| g.all_finite()) {
                return Err(NnError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f32;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(id) else {
                continue;
            };
            if g.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam",
                    left: p.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let n = g.len();
            let mom = self.moments.entry(p.name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let w = p.value.data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * gi;
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
