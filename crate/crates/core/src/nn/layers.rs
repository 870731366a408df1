use super::window_out;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given the forward input.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(shape_err(format!(
            "relu gradient shape {:?} differs from input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Flat input offsets of the maxima selected by [`maxpool`], one per output
/// element; used to route gradients back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndex {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Windowed max pooling without padding. Ties go to the first maximum in
/// row-major window order.
pub fn maxpool<T: Scalar>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndex)> {
    let (n, c, h, w) = x.dims4()?;
    if stride == 0 {
        return Err(shape_err("pooling stride must be at least 1"));
    }
    let (Some(ho), Some(wo)) = (window_out(h, window, 0, stride), window_out(w, window, 0, stride))
    else {
        return Err(shape_err(format!(
            "pooling window {window} exceeds the {h}×{w} spatial extent"
        )));
    };
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![n, c, ho, wo], out)?,
        PoolIndex {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(grad_out: &Tensor<T>, index: &PoolIndex) -> Result<Tensor<T>> {
    if grad_out.len() != index.argmax.len() {
        return Err(shape_err(format!(
            "pool gradient has {} elements, forward produced {}",
            grad_out.len(),
            index.argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(&index.input_shape);
    let g = grad.data_mut();
    for (&src, &dst) in grad_out.data().iter().zip(&index.argmax) {
        g[dst] += src;
    }
    Ok(grad)
}

/// `n × …` to `n × rest`.
pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let shape = vec![x.batch(), x.row_len()];
    x.clone().reshape(shape).expect("flatten preserves element count")
}

pub fn unflatten<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    x.clone().reshape(shape.to_vec())
}
