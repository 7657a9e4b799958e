//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::network::{Gradients, Network, TrainMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies one Adam update in place; `t` is the 1-based step number.
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
) {
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::one() - T::of(cfg.beta1.powi(t as i32));
    let c2 = T::one() - T::of(cfg.beta2.powi(t as i32));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Moments for every parameter tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = net
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// Updates the trainable layers of `net`; masked layers are untouched.
    pub fn step(
        &mut self,
        net: &mut Network<T>,
        grads: &Gradients<T>,
        mask: &TrainMask,
    ) -> Result<()> {
        if mask.len() != net.layer_count() {
            return Err(Error::dim("mask", net.layer_count(), mask.len()));
        }
        let owners = net.tensor_layers();
        let g = grads.tensors();
        if g.len() != self.m.len() || g.iter().zip(&self.m).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::dim(
                "gradients",
                "shapes mirroring the optimizer state",
                "mismatched tensors",
            ));
        }
        self.t += 1;
        let t = self.t;
        for (k, param) in net.tensors_mut().into_iter().enumerate() {
            if param.shape() != self.m[k].shape() {
                return Err(Error::dim(
                    "parameters",
                    format!("{:?}", self.m[k].shape()),
                    format!("{:?}", param.shape()),
                ));
            }
            if !mask.is_trainable(owners[k]) {
                continue;
            }
            adam_update(
                param.as_mut_slice(),
                g[k].as_slice(),
                self.m[k].as_mut_slice(),
                self.v[k].as_mut_slice(),
                t,
                &self.config,
            );
        }
        Ok(())
    }
}
