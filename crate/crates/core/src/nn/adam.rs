//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::NamedTensors;
use crate::nn::tensor::Tensor;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: moment accumulators mirror the parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new<P: NamedTensors<F>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<F>> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| Tensor::zeros(t.dims()))
            .collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter is touched.
    pub fn step<P: NamedTensors<F>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        if grads.len() != self.m.len() {
            return Err(Error::dim("optimizer tensors", self.m.len(), grads.len()));
        }
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::of(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = F::of(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps) = (F::of(c.lr), F::of(c.eps));
        let one = F::one();
        for (k, ((_, p), (_, g))) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            if p.dims() != g.dims() {
                return Err(Error::dim("gradient shape", p.numel(), g.numel()));
            }
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
