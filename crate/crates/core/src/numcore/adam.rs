use serde::{Deserialize, Serialize};

use super::graph::ParamStore;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{PieError, Result};

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
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter of one store.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        OptimizerState {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
///
/// Fails without touching any parameter if a gradient is not finite.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, state: &mut OptimizerState<T>) -> Result<()> {
    adam_step_with_lr(params, state, state.config.learning_rate)
}

pub fn adam_step_with_lr<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut OptimizerState<T>,
    learning_rate: f64,
) -> Result<()> {
    if state.first_moment.len() != params.len() {
        return Err(PieError::InvalidState(format!(
            "optimizer tracks {} parameters, store has {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (_, p) in params.iter() {
        if !p.grad.all_finite() {
            return Err(PieError::Divergence(format!("gradient of {}", p.name)));
        }
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let c1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
    let lr = T::from_f64(learning_rate);
    let eps = T::from_f64(cfg.eps);
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let g = p.grad.data();
        for (((w, &gi), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi * c1;
            let vhat = *vi * c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
