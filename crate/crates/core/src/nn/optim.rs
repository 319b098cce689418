use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(config: AdamWConfig, store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::c(c.beta1), F::c(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let lr = F::c(c.lr);
        let decay = F::one() - F::c(c.lr * c.weight_decay);
        let (bc1, bc2, eps) = (F::c(bc1), F::c(bc2), F::c(c.eps));
        for (((p, g), m), v) in store
            .iter_mut()
            .zip(&grads.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] = p.data[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
