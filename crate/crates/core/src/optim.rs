//! Stochastic gradient descent with classical momentum, plus the cosine
//! learning-rate schedule used for encoder pretraining.

use std::collections::BTreeMap;

use crate::diffmath::{FeatureMatrix, Gradients, ParamSet};

/// `v <- momentum * v + g; p <- p - lr * v`, applied to non-frozen entries.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, FeatureMatrix>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self { learning_rate, momentum, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.step_with_lr(params, grads, self.learning_rate);
    }

    /// A single update with an explicit learning rate, for schedules.
    pub fn step_with_lr(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) {
        for (name, param) in params.iter_mut() {
            if param.frozen {
                continue;
            }
            let Some(grad) = grads.get(name) else { continue };
            let velocity = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| FeatureMatrix::zeros(param.value.rows(), param.value.cols()));
            for ((v, g), p) in velocity
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(param.value.data_mut())
            {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

/// Half-cosine decay from `base_lr` to zero over `total` steps.
pub fn cosine_lr(base_lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base_lr;
    }
    let progress = step as f64 / total as f64;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
}
