use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{ArchSpec, Variant};
use crate::error::{invalid, Error, Result};
use crate::nn::LayerKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Filters (`out × in × s × s`) and biases of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub filters: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(out: usize, input: usize, size: usize) -> Self {
        Self {
            filters: Tensor::zeros(&[out, input, size, size]),
            bias: vec![T::zero(); out],
        }
    }

    pub fn param_count(&self) -> usize {
        self.filters.len() + self.bias.len()
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PostOp {
    Relu,
    Pool { window: usize, stride: usize },
}

/// One conv level together with the non-parametric layers that follow it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Segment {
    pub level: usize,
    pub size: usize,
    pub pad: usize,
    pub stride: usize,
    /// Pooling applied to the S1 conv input only.
    pub s1_pre_pool: Option<(usize, usize)>,
    pub post: Vec<PostOp>,
    pub s1_in: usize,
    pub s1_out: usize,
    /// Channels S2 reads from the S1 map of the previous level (level 0
    /// being the raw input).
    pub s2_in_s1: usize,
    /// Channels S2 reads from its own previous level.
    pub s2_in_own: usize,
    pub s2_out: usize,
}

pub(crate) fn layout(spec: &ArchSpec, input_channels: usize) -> Result<Vec<Segment>> {
    if input_channels == 0 {
        return Err(invalid("input must have at least one channel"));
    }
    if spec.has_residual() {
        return Err(Error::Unsupported(
            "residual blocks are supported by the cost model only".into(),
        ));
    }
    let levels = spec.conv_levels();
    let mut segments: Vec<Segment> = Vec::with_capacity(levels.len());
    let mut pending_pool = None;
    for (j, cl) in levels.iter().enumerate() {
        let LayerKind::Conv { size, pad, stride } = cl.spec.kind else {
            unreachable!("conv levels are convolutions");
        };
        let end = levels.get(j + 1).map_or(spec.layers.len(), |n| n.layer_index);
        let mut post = Vec::new();
        let mut next_pool = None;
        for l in &spec.layers[cl.layer_index + 1..end] {
            match l.kind {
                LayerKind::Relu => post.push(PostOp::Relu),
                LayerKind::MaxPool { window, stride } if l.s1_only => next_pool = Some((window, stride)),
                LayerKind::MaxPool { window, stride } => post.push(PostOp::Pool { window, stride }),
                _ => unreachable!("validated spec"),
            }
        }
        let (a, b) = (cl.spec.n_s1, cl.spec.n_s2);
        let (a_prev, b_prev) = match j {
            0 => (input_channels, 0),
            _ => (levels[j - 1].spec.n_s1, levels[j - 1].spec.n_s2),
        };
        let s1_in = if a > 0 { a_prev } else { 0 };
        let (s2_in_s1, s2_in_own, s2_out) = match spec.variant {
            Variant::NonSharing if j == 0 => (input_channels, 0, a + b),
            Variant::NonSharing => (0, a_prev + b_prev, a + b),
            _ if b > 0 => (a_prev, b_prev, b),
            _ => (0, 0, 0),
        };
        segments.push(Segment {
            level: j + 1,
            size,
            pad,
            stride,
            s1_pre_pool: pending_pool.take(),
            post,
            s1_in,
            s1_out: a,
            s2_in_s1,
            s2_in_own,
            s2_out,
        });
        pending_pool = next_pool;
    }

    if spec.variant == Variant::Sharing && spec.has_s1_only_layers() {
        let s1_last = spec.s1_levels().map_or(0, |r| *r.end());
        if segments.len() > s1_last {
            return Err(Error::Unsupported(
                "an S1-only pool shrinks the S1 head maps, so S2 cannot read them at the next level"
                    .into(),
            ));
        }
    }
    Ok(segments)
}

/// Weights of a two-stage cascade (or of its degenerate monolithic form).
///
/// Per conv level `l` the S1 filters are `n_l^{S1} × n_{l−1}^{S1} × s × s`
/// and the S2 filters are `n_l^{S2} × (n_{l−1}^{S1} + n_{l−1}^{S2}) × s × s`;
/// there are no S2→S1 connections. In the non-sharing form S2 is a separate
/// network of the monolithic widths that reads only the raw input.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel<T> {
    pub(crate) spec: ArchSpec,
    pub(crate) input_channels: usize,
    pub(crate) segments: Vec<Segment>,
    pub(crate) s1: Vec<Option<ConvParams<T>>>,
    pub(crate) s2: Vec<Option<ConvParams<T>>>,
    pub(crate) vel_s1: Vec<Option<ConvParams<T>>>,
    pub(crate) vel_s2: Vec<Option<ConvParams<T>>>,
}

impl<T: Scalar> CascadeModel<T> {
    /// Allocates every weight tensor and draws filters from a Gaussian with
    /// standard deviation `sqrt(2 / fan_in)`; biases start at zero. The same
    /// seed always produces the same model.
    pub fn build(spec: &ArchSpec, input_channels: usize, seed: u64) -> Result<Self> {
        let segments = layout(spec, input_channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |out: usize, input: usize, size: usize| -> Option<ConvParams<T>> {
            if out == 0 {
                return None;
            }
            let fan_in = (input * size * size) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            let filters = Tensor::from_fn(&[out, input, size, size], |_| {
                T::from_f64_lossy(normal.sample(&mut rng))
            });
            Some(ConvParams {
                filters,
                bias: vec![T::zero(); out],
            })
        };
        let mut s1 = Vec::with_capacity(segments.len());
        let mut s2 = Vec::with_capacity(segments.len());
        for seg in &segments {
            s1.push(init(seg.s1_out, seg.s1_in, seg.size));
            s2.push(init(seg.s2_out, seg.s2_in_s1 + seg.s2_in_own, seg.size));
        }
        let zero_like = |v: &Vec<Option<ConvParams<T>>>| -> Vec<Option<ConvParams<T>>> {
            v.iter()
                .map(|p| {
                    p.as_ref()
                        .map(|p| ConvParams::zeros(p.out_channels(), p.in_channels(), p.filters.shape()[2]))
                })
                .collect()
        };
        let (vel_s1, vel_s2) = (zero_like(&s1), zero_like(&s2));
        Ok(Self {
            spec: spec.clone(),
            input_channels,
            segments,
            s1,
            s2,
            vel_s1,
            vel_s2,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    pub fn has_s1(&self) -> bool {
        self.s1.iter().any(Option::is_some)
    }

    /// Last level with S1 filters (0 for a monolithic model).
    pub fn s1_last_level(&self) -> usize {
        self.s1.iter().rposition(Option::is_some).map_or(0, |i| i + 1)
    }

    /// First level with S2 filters.
    pub fn s2_first_level(&self) -> usize {
        self.s2.iter().position(Option::is_some).map_or(0, |i| i + 1)
    }

    pub fn s1_class_count(&self) -> usize {
        self.spec.s1_class_count
    }

    pub fn s2_class_count(&self) -> usize {
        self.spec.s2_class_count
    }

    /// S1 weights of conv level `level` (1-based).
    pub fn s1_params(&self, level: usize) -> Option<&ConvParams<T>> {
        self.s1.get(level.checked_sub(1)?)?.as_ref()
    }

    pub fn s1_params_mut(&mut self, level: usize) -> Option<&mut ConvParams<T>> {
        self.s1.get_mut(level.checked_sub(1)?)?.as_mut()
    }

    /// S2 weights of conv level `level` (1-based). Input channels are ordered
    /// `[S1 maps ‖ S2 maps]` of the previous level.
    pub fn s2_params(&self, level: usize) -> Option<&ConvParams<T>> {
        self.s2.get(level.checked_sub(1)?)?.as_ref()
    }

    pub fn s2_params_mut(&mut self, level: usize) -> Option<&mut ConvParams<T>> {
        self.s2.get_mut(level.checked_sub(1)?)?.as_mut()
    }

    /// Channels S2 reads from the S1 map of the previous level.
    pub fn s2_shared_inputs(&self, level: usize) -> usize {
        self.segments.get(level.wrapping_sub(1)).map_or(0, |s| s.s2_in_s1)
    }

    /// Allocated weights plus biases as `(S1, S2)`.
    pub fn param_count(&self) -> (usize, usize) {
        let count = |v: &Vec<Option<ConvParams<T>>>| v.iter().flatten().map(ConvParams::param_count).sum();
        (count(&self.s1), count(&self.s2))
    }

    /// Clears the optimizer state.
    pub fn reset_momentum(&mut self) {
        for p in self.vel_s1.iter_mut().chain(self.vel_s2.iter_mut()).flatten() {
            p.filters.data_mut().iter_mut().for_each(|v| *v = T::zero());
            p.bias.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// All weight tensors in checkpoint order: per level S1 filters, S1
    /// bias, S2 filters, S2 bias (absent stages skipped).
    pub(crate) fn params_in_order(&self) -> Vec<&ConvParams<T>> {
        self.s1
            .iter()
            .zip(&self.s2)
            .flat_map(|(a, b)| a.iter().chain(b.iter()))
            .collect()
    }

    pub(crate) fn params_in_order_mut(&mut self) -> Vec<&mut ConvParams<T>> {
        self.s1
            .iter_mut()
            .zip(self.s2.iter_mut())
            .flat_map(|(a, b)| a.iter_mut().chain(b.iter_mut()))
            .collect()
    }

    /// Same weights with every value converted to another precision.
    pub fn cast<U: Scalar>(&self) -> CascadeModel<U> {
        let conv = |v: &Vec<Option<ConvParams<T>>>| -> Vec<Option<ConvParams<U>>> {
            v.iter()
                .map(|p| {
                    p.as_ref().map(|p| ConvParams {
                        filters: p.filters.cast(),
                        bias: p.bias.iter().map(|&b| U::from_f64_lossy(b.as_f64())).collect(),
                    })
                })
                .collect()
        };
        CascadeModel {
            spec: self.spec.clone(),
            input_channels: self.input_channels,
            segments: self.segments.clone(),
            s1: conv(&self.s1),
            s2: conv(&self.s2),
            vel_s1: conv(&self.vel_s1),
            vel_s2: conv(&self.vel_s2),
        }
    }
}
