use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments for every parameter tensor, plus the step
/// count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &[&[T]]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr · (m̂ / (√v̂ + eps) + weight_decay · θ)`.
///
/// Non-finite gradients abort the step before anything changes.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::usage(format!(
            "{} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::usage(format!(
                "tensor {i}: {} values, gradient {}, moments {}",
                p.len(),
                g.len(),
                m.len()
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in tensor {i} at {j}"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            let gi = g[i].as_f64();
            let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let theta = p[i].as_f64();
            let update = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps) + cfg.weight_decay * theta;
            p[i] = T::of(theta - cfg.lr * update);
        }
    }
    Ok(())
}
