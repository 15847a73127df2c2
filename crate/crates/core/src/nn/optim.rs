use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers for one flat vector.
#[derive(Clone, Debug)]
pub struct AdamSlot {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamSlot {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One bias-corrected Adam update at step `t` (1-based), in place.
    pub fn update(&mut self, h: &AdamHyper, t: u64, x: &mut [f32], g: &[f32]) {
        let bc1 = 1.0 - h.beta1.powi(t as i32);
        let bc2 = 1.0 - h.beta2.powi(t as i32);
        for i in 0..x.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            x[i] -= h.lr * mh / (vh.sqrt() + h.eps);
        }
    }
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub hyper: AdamHyper,
    t: u64,
    slots: Vec<AdamSlot>,
}

impl Adam {
    pub fn new(store: &ParamStore, hyper: AdamHyper) -> Self {
        Self { hyper, t: 0, slots: store.tensors().iter().map(|t| AdamSlot::new(t.len())).collect() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        for ((p, g), slot) in store.tensors_mut().iter_mut().zip(grads).zip(&mut self.slots) {
            slot.update(&self.hyper, self.t, p.data_mut(), g.data());
        }
    }
}
