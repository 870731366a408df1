use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Classical momentum step:
/// `v ← momentum·v + grad + weight_decay·param`, then `param ← param − lr·v`.
pub fn sgd_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    cfg: &SgdConfig,
) -> Result<()> {
    sgd_step_slice(param.data_mut(), grad.data(), velocity.data_mut(), cfg)
        .map_err(|_| shape_err(format!(
            "sgd shapes differ: param {:?}, grad {:?}",
            param.shape(),
            grad.shape()
        )))
}

pub(crate) fn sgd_step_slice<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    cfg: &SgdConfig,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(shape_err("sgd buffers differ in length"));
    }
    let lr = T::from_f64_lossy(cfg.lr);
    let mom = T::from_f64_lossy(cfg.momentum);
    let wd = T::from_f64_lossy(cfg.weight_decay);
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mom * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}
