use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax of an `n × K` (or `n × K × 1 × 1`) score tensor.
pub fn softmax_rows<T: Scalar>(scores: &Tensor<T>) -> Tensor<T> {
    let k = scores.row_len();
    let mut out = Vec::with_capacity(scores.len());
    for i in 0..scores.batch() {
        out.extend(softmax(scores.row(i)).into_iter().map(T::from_f64_lossy));
    }
    debug_assert_eq!(out.len(), scores.batch() * k);
    Tensor::new(scores.shape().to_vec(), out).expect("softmax preserves shape")
}

fn softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Mean softmax cross-entropy and its gradient with respect to `scores`.
pub fn cross_entropy<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let n = scores.batch();
    let k = scores.row_len();
    if labels.len() != n {
        return Err(shape_err(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(invalid(format!("label {bad} out of range for {k} classes")));
    }
    if n == 0 {
        return Ok((0.0, scores.clone()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (i, &label) in labels.iter().enumerate() {
        let p = softmax(scores.row(i));
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        grad.extend(p.iter().enumerate().map(|(j, &pj)| {
            let y = if j == label { 1.0 } else { 0.0 };
            T::from_f64_lossy((pj - y) * inv_n)
        }));
    }
    Ok((loss * inv_n, Tensor::new(scores.shape().to_vec(), grad)?))
}

/// Mean binary hinge loss `max(0, 1 − y·s)` for single-output scores and
/// labels in `{−1, +1}`.
pub fn binary_hinge<T: Scalar>(scores: &Tensor<T>, labels: &[i8]) -> Result<(f64, Tensor<T>)> {
    let n = scores.batch();
    if scores.row_len() != 1 {
        return Err(shape_err(format!(
            "hinge loss expects one score per example, got shape {:?}",
            scores.shape()
        )));
    }
    if labels.len() != n {
        return Err(shape_err(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
        return Err(invalid(format!("hinge label {bad} is not ±1")));
    }
    if n == 0 {
        return Ok((0.0, scores.clone()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&s, &y) in scores.data().iter().zip(labels) {
        let y = f64::from(y);
        let margin = 1.0 - y * s.as_f64();
        if margin > 0.0 {
            loss += margin;
            grad.push(T::from_f64_lossy(-y * inv_n));
        } else {
            grad.push(T::zero());
        }
    }
    Ok((loss * inv_n, Tensor::new(scores.shape().to_vec(), grad)?))
}
