use std::ops::Range;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// Activations are laid out as `batch × channels × height × width`, filters
/// as `out × in × s × s`. Every extent is at least one, except the leading
/// (batch) extent which may be zero so that an empty set of survivors can be
/// represented without a special case.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("invalid tensor shape");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        check_shape(shape).expect("invalid tensor shape");
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements in one batch row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let r = self.row_len();
        &self.data[i * r..(i + 1) * r]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let r = self.row_len();
        &mut self.data[i * r..(i + 1) * r]
    }

    /// Interpret as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(shape_err(format!("expected a rank-4 tensor, got {other:?}"))),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64_lossy(x.as_f64()))
                .collect(),
        }
    }

    /// Copy of a contiguous range of batch rows.
    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.end > self.batch() || rows.start > rows.end {
            return Err(shape_err(format!(
                "row range {rows:?} out of bounds for batch {}",
                self.batch()
            )));
        }
        let r = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Self {
            shape,
            data: self.data[rows.start * r..rows.end * r].to_vec(),
        })
    }

    /// Gather arbitrary batch rows into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let r = self.row_len();
        let mut data = Vec::with_capacity(rows.len() * r);
        for &i in rows {
            if i >= self.batch() {
                return Err(shape_err(format!(
                    "row {i} out of bounds for batch {}",
                    self.batch()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Self { shape, data })
    }

    /// Stack equally shaped rows (each without the batch extent).
    pub fn stack_rows(rows: &[Self]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| shape_err("cannot stack an empty list of rows"))?;
        let mut data = Vec::with_capacity(rows.len() * first.len());
        for r in rows {
            if r.shape != first.shape {
                return Err(shape_err(format!(
                    "row shapes differ: {:?} vs {:?}",
                    r.shape, first.shape
                )));
            }
            data.extend_from_slice(&r.data);
        }
        let mut shape = first.shape.clone();
        shape[0] *= rows.len();
        Self::new(shape, data)
    }

    /// Channel concatenation `[a ‖ b]` of two `n × c × h × w` tensors.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (n, ca, h, w) = a.dims4()?;
        let (nb, cb, hb, wb) = b.dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err(format!(
                "cannot concatenate channels of {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(&a.data[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&b.data[i * cb * plane..(i + 1) * cb * plane]);
        }
        Ok(Self {
            shape: vec![n, ca + cb, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `first` channels and
    /// the rest (either side may be empty).
    pub fn split_channels(&self, first: usize) -> Result<(Self, Self)> {
        let (n, c, h, w) = self.dims4()?;
        if first > c {
            return Err(shape_err(format!(
                "channel split at {first} is invalid for {c} channels"
            )));
        }
        let plane = h * w;
        let mut a = Vec::with_capacity(n * first * plane);
        let mut b = Vec::with_capacity(n * (c - first) * plane);
        for i in 0..n {
            let row = &self.data[i * c * plane..(i + 1) * c * plane];
            a.extend_from_slice(&row[..first * plane]);
            b.extend_from_slice(&row[first * plane..]);
        }
        Ok((
            Self {
                shape: vec![n, first, h, w],
                data: a,
            },
            Self {
                shape: vec![n, c - first, h, w],
                data: b,
            },
        ))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max),
        )
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(shape_err("tensor rank must be at least one"));
    }
    if let Some(pos) = shape.iter().skip(1).position(|&e| e == 0) {
        return Err(shape_err(format!(
            "extent {} of shape {shape:?} is zero",
            pos + 1
        )));
    }
    Ok(())
}
