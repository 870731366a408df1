use super::{counters, window_out};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients produced by [`conv_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Vec<T>,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: usize,
    s: usize,
    ho: usize,
    wo: usize,
    pad: usize,
    stride: usize,
}

impl Geometry {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        filters: &Tensor<T>,
        pad: usize,
        stride: usize,
    ) -> Result<Self> {
        let (n, c, h, w) = input.dims4()?;
        let (out, fc, kh, kw) = filters.dims4()?;
        if fc != c {
            return Err(shape_err(format!(
                "input has {c} channels but filters expect {fc} (filters {:?})",
                filters.shape()
            )));
        }
        if kh != kw {
            return Err(shape_err(format!("filters must be square, got {kh}×{kw}")));
        }
        if stride == 0 {
            return Err(shape_err("convolution stride must be at least 1"));
        }
        let ho = window_out(h, kh, pad, stride);
        let wo = window_out(w, kw, pad, stride);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(shape_err(format!(
                "{kh}×{kw} filter with pad {pad} does not fit a {h}×{w} input"
            )));
        };
        Ok(Self {
            n,
            c,
            h,
            w,
            out,
            s: kh,
            ho,
            wo,
            pad,
            stride,
        })
    }

    fn k(&self) -> usize {
        self.c * self.s * self.s
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one image into a `(c·s·s) × (ho·wo)` column matrix.
    fn im2col<T: Scalar>(&self, img: &[T], col: &mut [f64]) {
        let (s, p) = (self.s, self.p());
        for ch in 0..self.c {
            let plane = &img[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..s {
                for kx in 0..s {
                    let row = &mut col[((ch * s + ky) * s + kx) * p..][..p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy as usize >= self.h {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix as usize >= self.w {
                                0.0
                            } else {
                                src[ix as usize].as_f64()
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column-matrix gradient back into an image gradient.
    fn col2im(&self, col: &[f64], img: &mut [f64]) {
        let (s, p) = (self.s, self.p());
        for ch in 0..self.c {
            let plane = &mut img[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..s {
                for kx in 0..s {
                    let row = &col[((ch * s + ky) * s + kx) * p..][..p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            plane[iy as usize * self.w + ix as usize] += row[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution with explicit zero padding.
///
/// `input` is `n × c × h × w`, `filters` is `out × c × s × s`, `bias` has one
/// entry per output channel. Reductions accumulate in `f64`.
pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &[T],
    pad: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, filters, pad, stride)?;
    if bias.len() != g.out {
        return Err(shape_err(format!(
            "bias has {} entries for {} filters",
            bias.len(),
            g.out
        )));
    }
    let (k, p) = (g.k(), g.p());
    let weights: Vec<f64> = filters.data().iter().map(|w| w.as_f64()).collect();
    let mut out = Vec::with_capacity(g.n * g.out * p);
    let mut col = vec![0.0f64; k * p];
    let mut acc = vec![0.0f64; p];
    for i in 0..g.n {
        g.im2col(input.row(i), &mut col);
        for (o, b) in bias.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let wrow = &weights[o * k..(o + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let crow = &col[kk * p..(kk + 1) * p];
                for (a, &cv) in acc.iter_mut().zip(crow) {
                    *a += wv * cv;
                }
            }
            let bv = b.as_f64();
            out.extend(acc.iter().map(|&a| T::from_f64_lossy(a + bv)));
        }
    }
    counters::record((g.n * g.out * k * p) as u64);
    Tensor::new(vec![g.n, g.out, g.ho, g.wo], out)
}

/// Backward pass of [`conv_forward`] for the same `pad` and `stride`.
pub fn conv_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    filters: &Tensor<T>,
    pad: usize,
    stride: usize,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, filters, pad, stride)?;
    let expected = [g.n, g.out, g.ho, g.wo];
    if grad_out.shape() != expected {
        return Err(shape_err(format!(
            "output gradient has shape {:?}, forward produced {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let (k, p) = (g.k(), g.p());
    let weights: Vec<f64> = filters.data().iter().map(|w| w.as_f64()).collect();
    let mut gw = vec![0.0f64; g.out * k];
    let mut gb = vec![0.0f64; g.out];
    let mut gin = Vec::with_capacity(input.len());
    let mut col = vec![0.0f64; k * p];
    let mut gcol = vec![0.0f64; k * p];
    let mut gimg = vec![0.0f64; g.c * g.h * g.w];
    for i in 0..g.n {
        g.im2col(input.row(i), &mut col);
        gcol.iter_mut().for_each(|v| *v = 0.0);
        let go = grad_out.row(i);
        for o in 0..g.out {
            let grow: Vec<f64> = go[o * p..(o + 1) * p].iter().map(|v| v.as_f64()).collect();
            gb[o] += grow.iter().sum::<f64>();
            for kk in 0..k {
                let crow = &col[kk * p..(kk + 1) * p];
                gw[o * k + kk] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                let wv = weights[o * k + kk];
                if wv != 0.0 {
                    let dst = &mut gcol[kk * p..(kk + 1) * p];
                    for (d, &gv) in dst.iter_mut().zip(&grow) {
                        *d += wv * gv;
                    }
                }
            }
        }
        gimg.iter_mut().for_each(|v| *v = 0.0);
        g.col2im(&gcol, &mut gimg);
        gin.extend(gimg.iter().map(|&v| T::from_f64_lossy(v)));
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gin)?,
        filters: Tensor::new(filters.shape().to_vec(), gw.into_iter().map(T::from_f64_lossy).collect())?,
        bias: gb.into_iter().map(T::from_f64_lossy).collect(),
    })
}
