use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// SGD hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "need lr > 0, 0 <= momentum < 1, weight decay >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// Momentum buffers, one per parameter tensor, plus the hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub config: SgdConfig,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new<'a>(config: SgdConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }
}

/// Heavy-ball update with weight decay folded into the gradient:
/// `v = momentum * v - lr * (g + decay * w)`, then `w += v`.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut OptimState<T>,
) -> Result<()> {
    state.config.validate()?;
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Dimension(format!(
            "sgd: {} params, {} grads, {} momentum buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Dimension(format!(
                "sgd: param {:?}, grad {:?}, momentum {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let mu = T::from_f64(state.config.momentum);
    let lr = T::from_f64(state.config.lr);
    let decay = T::from_f64(state.config.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * (gi + decay * *w);
            *w += *vi;
        }
    }
    Ok(())
}
