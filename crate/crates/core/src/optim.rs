//! SGD with momentum, L2 weight decay and a step-decay schedule.

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// One momentum buffer per parameter; empty until the first step.
    pub velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// `v = μ·v + (g + λ·w)`, `w -= lr·v`. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let gd = g.as_ref().map(Tensor::data);
            for (i, (w, vel)) in p.data_mut().iter_mut().zip(v.data_mut()).enumerate() {
                let grad = gd.map_or(0.0, |d| d[i]) + self.weight_decay * *w;
                *vel = self.momentum * *vel + grad;
                *w -= lr * *vel;
            }
        }
    }
}

/// Learning rate for `epoch` under step decay: `base · factor^⌊epoch / every⌋`.
pub fn step_decay_lr(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    if every == 0 {
        return base;
    }
    base * factor.powi((epoch / every) as i32)
}
