use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter tensor, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let zeros: Vec<Tensor> = shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected ADAM update with learning rate `lr`. Every gradient
/// is checked before anything changes, so a non-finite gradient leaves
/// parameters and state untouched.
pub fn adam_step(params: Vec<(&str, &mut Tensor)>, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::usage(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::config(format!(
                "gradient {:?} for `{name}` of shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if g.first_non_finite().is_some() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    for (((_, p), g), (m, v)) in params.into_iter().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in it {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}
