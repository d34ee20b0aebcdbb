//! Adaptive-moment (Adam) optimiser with bias correction.

use alloc::vec::Vec;

use crate::math;
use crate::tape::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment state for one [`ParamSet`]; persists across steps.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = |p: &crate::tape::Parameter| Tensor::zeros(p.value.shape());
        Adam { config, step: 0, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect() }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `params`.
    /// Non-trainable parameters are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, lr: f32) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - math::powi(beta1, self.step as i32);
        let bc2 = 1.0 - math::powi(beta2, self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            for (j, x) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *x -= lr * mhat / (math::sqrt(vhat) + eps);
            }
        }
    }
}
