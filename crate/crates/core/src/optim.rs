//! Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter set. Buffers are created on the first step.
#[derive(Clone)]
pub struct OptimState<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> std::fmt::Debug for OptimState<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptimState")
            .field("config", &self.config)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to parameter `i`;
/// parameters without a gradient are left untouched, moments included.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimState<T>,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::invalid(
            "adam",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        if g.shape() != params.get(i).shape() {
            return Err(Error::shape("adam", params.get(i).shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(params.name(i).to_string()));
        }
    }
    if state.first.len() != params.len() {
        state.first = params.iter().map(|(_, p)| Tensor::zeros(p.shape().to_vec())).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let p = params.get_mut(i).data_mut();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j].to_f64();
            let mj = beta1 * m[j].to_f64() + (1.0 - beta1) * gj;
            let vj = beta2 * v[j].to_f64() + (1.0 - beta2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            p[j] = T::from_f64(p[j].to_f64() - update);
        }
    }
    Ok(())
}
