//! Adam with bias correction, constant learning rate, no weight decay.

use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Element>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    ensure!(
        param.shape() == grad.shape() && param.shape() == state.m.shape(),
        "adam shapes differ: param {:?}, grad {:?}, state {:?}",
        param.shape(),
        grad.shape(),
        state.m.shape()
    );
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        let g = g.as_f64();
        let mn = b1 * m.as_f64() + (1.0 - b1) * g;
        let vn = b2 * v.as_f64() + (1.0 - b2) * g * g;
        *m = T::from_f64(mn);
        *v = T::from_f64(vn);
        let step = cfg.lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
        *p = T::from_f64(p.as_f64() - step);
    }
    Ok(())
}
