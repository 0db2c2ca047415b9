use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::network::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates, one buffer per parameter in storage order. `counts`
/// holds how many updates each parameter has received, for bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            counts: vec![0; params.len()],
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<Tensor>], lr: f64) {
        for (k, (entry, g)) in params.entries_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            self.counts[k] += 1;
            let c = self.counts[k] as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(c);
            let bc2 = 1.0 - ADAM_BETA2.powi(c);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((p, &gi), mi), vi) in entry.tensor.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.scale_in_place(c));
    }
    norm
}

/// Cosine annealing from `base` at step 0 to zero at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let frac = (step as f64 / total.max(1) as f64).min(1.0);
    0.5 * base * (1.0 + (PI * frac).cos())
}
