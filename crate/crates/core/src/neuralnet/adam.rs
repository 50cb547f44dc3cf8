//! Adam optimizer over the model's trainable parameter groups.

use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates per trainable group, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let shape: Vec<Vec<Vec<f64>>> = model
            .params
            .iter()
            .map(|p| p.trainable_slices().iter().map(|s| vec![0.0; s.len()]).collect())
            .collect();
        Self { m: shape.clone(), v: shape, step: 0 }
    }
}

/// One bias-corrected Adam update. Layers whose spec marks them
/// non-trainable are skipped.
pub fn adam_step(model: &mut Model, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (li, params) in model.params.iter_mut().enumerate() {
        if !model.spec.layers[li].trainable {
            continue;
        }
        let grad_groups = grads.layers[li].group_slices();
        for (gi, pslice) in params.trainable_slices_mut().into_iter().enumerate() {
            let g = grad_groups[gi];
            let m = &mut state.m[li][gi];
            let v = &mut state.v[li][gi];
            for k in 0..pslice.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                pslice[k] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }
}
