use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;

/// Adam hyperparameters. Defaults are the usual 0.9 / 0.999 / 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment estimates, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }
}

/// One bias-corrected Adam update over every trainable parameter.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first_moment.len() != store.len() {
        return Err(TensorError::InvalidArgument("optimizer state does not match parameter store".into()));
    }
    for (name, t) in store.iter_mut() {
        if t.requires_grad && t.grad.is_none() {
            return Err(TensorError::MissingGradient(name.to_string()));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (_, p)) in store.iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let g = p.grad.take().expect("checked above");
        let (m, v) = (&mut state.first_moment[i], &mut state.second_moment[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
        p.grad = Some(g);
    }
    Ok(())
}

/// Clamps every element of every gradient buffer to `[lo, hi]`.
pub fn clip_gradients(store: &mut ParamStore, lo: f64, hi: f64) -> Result<()> {
    if lo > hi {
        return Err(TensorError::InvalidArgument(format!("clip range [{lo}, {hi}] is empty")));
    }
    for (_, t) in store.iter_mut() {
        if let Some(g) = t.grad.as_mut() {
            clip_values(g, lo, hi);
        }
    }
    Ok(())
}

pub fn clip_values(values: &mut [f64], lo: f64, hi: f64) {
    for v in values {
        *v = v.clamp(lo, hi);
    }
}
