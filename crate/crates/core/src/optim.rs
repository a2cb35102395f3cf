//! Adam with classical (L2, added to the gradient) weight decay and
//! global-norm gradient clipping.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Gradients, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

/// First and second moments for every parameter block, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `block_sizes`.
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }
}

/// Rescales `grads` so their global L2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut Gradients<T>, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip_norm && norm > 0.0 {
        let scale = clip_norm / norm;
        for v in grads.blocks.iter_mut().flatten() {
            *v = T::of(v.as_f64() * scale);
        }
    }
    norm
}

/// One Adam update of every block in `params`.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(alloc::format!(
            "{} parameter blocks, {} gradient blocks, {} optimizer blocks",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (b, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[b].len() {
            return Err(Error::Shape(alloc::format!("block {b} sizes differ")));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[b], &mut state.v[b]);
        for i in 0..p.len() {
            let theta = p[i].as_f64();
            let grad = g[i].as_f64() + weight_decay * theta;
            let mi = beta1 * m[i].as_f64() + (1.0 - beta1) * grad;
            let vi = beta2 * v[i].as_f64() + (1.0 - beta2) * grad * grad;
            m[i] = T::of(mi).flush_subnormal();
            v[i] = T::of(vi).flush_subnormal();
            let update = learning_rate * (mi / c1) / ((vi / c2).sqrt() + epsilon);
            // weights with no data gradient decay geometrically under weight
            // decay; stop them at zero instead of letting them turn subnormal
            p[i] = T::of(theta - update).flush_subnormal();
        }
    }
    Ok(())
}
