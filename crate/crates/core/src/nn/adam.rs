use serde::{Deserialize, Serialize};

use super::{real, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn zeros(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Increments `state.t` first, so the first
/// call uses `t = 1`.
pub fn adam_step<T: Real>(params: &mut [&mut [T]], grads: &[Vec<T>], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(
            "adam step",
            format!("{} parameter tensors, {} gradients, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2): (T, T) = (real(cfg.beta1), real(cfg.beta2));
    let c1: T = real(1.0 - cfg.beta1.powi(t));
    let c2: T = real(1.0 - cfg.beta2.powi(t));
    let (lr, eps): (T, T) = (real(cfg.learning_rate), real(cfg.eps));
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(Error::invalid("adam step", format!("tensor {k} length mismatch")));
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
