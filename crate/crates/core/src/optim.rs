//! Adam with decoupled weight decay.

use alloc::vec::Vec;

use crate::graph::{Gradients, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8, 0.01)
    }

    pub fn with_hyper(params: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Matrix::zeros(p.rows, p.cols)).collect();
        Self { beta1, beta2, eps, weight_decay, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (i, p) in params.values_mut().enumerate() {
            let g = &grads.grads[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= lr * (mh / (libm::sqrt(vh) + self.eps) + self.weight_decay * p.data[k]);
            }
        }
    }
}
