use serde::{Deserialize, Serialize};

use super::forward::{head_scores, seg_forward, PostCache, SegCache};
use super::model::{CascadeModel, ConvParams, Segment};
use crate::error::{invalid, shape_err, Result};
use crate::nn::{self, sgd::sgd_step_slice, SgdConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum S2LossKind {
    CrossEntropy,
    /// Binary hinge on a single S2 output; S2 label 1 is the positive class.
    BinaryHinge,
}

impl std::str::FromStr for S2LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" | "cross-entropy" | "cross_entropy" | "crossentropy" => Ok(S2LossKind::CrossEntropy),
            "hinge" | "binary-hinge" | "binary_hinge" => Ok(S2LossKind::BinaryHinge),
            other => Err(invalid(format!("unknown S2 loss `{other}`"))),
        }
    }
}

/// `L = α·L^{S1} + (1 − α)·L^{S2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLossConfig {
    pub alpha: f64,
    pub s2_loss_kind: S2LossKind,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            s2_loss_kind: S2LossKind::CrossEntropy,
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Gradients laid out like the model's weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub s1: Vec<Option<ConvParams<T>>>,
    pub s2: Vec<Option<ConvParams<T>>>,
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Backward through one segment. `g_out` is the gradient of the segment
/// output, `g_conv` an extra gradient applied directly at the conv output.
fn seg_backward<T: Scalar>(
    g_out: Option<Tensor<T>>,
    g_conv: Option<Tensor<T>>,
    cache: &SegCache<T>,
    p: &ConvParams<T>,
    seg: &Segment,
) -> Result<nn::ConvGrads<T>> {
    let mut g = g_out;
    if let Some(mut cur) = g.take() {
        for pc in cache.post.iter().rev() {
            cur = match pc {
                PostCache::Relu(input) => nn::relu_backward(&cur, input)?,
                PostCache::Pool(index) => nn::maxpool_backward(&cur, index)?,
            };
        }
        g = Some(cur);
    }
    let g = match (g, g_conv) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b)?;
            a
        }
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!("segment output is consumed"),
    };
    let mut grads = nn::conv_backward(&g, &cache.conv_input, &p.filters, seg.pad, seg.stride)?;
    if let Some(index) = &cache.pre_pool {
        grads.input = nn::maxpool_backward(&grads.input, index)?;
    }
    Ok(grads)
}

impl<T: Scalar> CascadeModel<T> {
    /// Combined loss without gradients.
    pub fn joint_loss(
        &self,
        batch: &Tensor<T>,
        s1_labels: &[usize],
        s2_labels: &[usize],
        cfg: &JointLossConfig,
    ) -> Result<LossReport> {
        cfg.validate()?;
        self.joint(batch, s1_labels, s2_labels, cfg.alpha, cfg.s2_loss_kind, false)
            .map(|(l, _)| l)
    }

    /// Combined loss and its gradient with respect to every weight. S1
    /// weights receive gradient from both losses through the shared maps,
    /// S2 weights from `L^{S2}` only.
    pub fn joint_gradients(
        &self,
        batch: &Tensor<T>,
        s1_labels: &[usize],
        s2_labels: &[usize],
        cfg: &JointLossConfig,
    ) -> Result<(LossReport, Gradients<T>)> {
        cfg.validate()?;
        self.joint(batch, s1_labels, s2_labels, cfg.alpha, cfg.s2_loss_kind, true)
            .map(|(l, g)| (l, g.expect("gradients requested")))
    }

    /// One optimizer step on the combined loss; returns the loss before the step.
    pub fn train_step(
        &mut self,
        batch: &Tensor<T>,
        s1_labels: &[usize],
        s2_labels: &[usize],
        loss: &JointLossConfig,
        sgd: &SgdConfig,
    ) -> Result<LossReport> {
        sgd.validate()?;
        let (report, grads) = self.joint_gradients(batch, s1_labels, s2_labels, loss)?;
        self.apply_gradients(&grads, sgd)?;
        Ok(report)
    }

    /// Step with an unchecked `alpha` (which may be 0 or 1).
    #[doc(hidden)]
    pub fn train_step_raw_alpha(
        &mut self,
        batch: &Tensor<T>,
        s1_labels: &[usize],
        s2_labels: &[usize],
        alpha: f64,
        kind: super::S2LossKind,
        sgd: &SgdConfig,
    ) -> Result<LossReport> {
        let (report, grads) = self.joint(batch, s1_labels, s2_labels, alpha, kind, true)?;
        self.apply_gradients(&grads.expect("gradients requested"), sgd)?;
        Ok(report)
    }

    pub fn apply_gradients(&mut self, grads: &Gradients<T>, sgd: &SgdConfig) -> Result<()> {
        let params = self.s1.iter_mut().chain(self.s2.iter_mut());
        let vels = self.vel_s1.iter_mut().chain(self.vel_s2.iter_mut());
        let gs = grads.s1.iter().chain(grads.s2.iter());
        for ((p, v), g) in params.zip(vels).zip(gs) {
            match (p, v, g) {
                (Some(p), Some(v), Some(g)) => {
                    sgd_step_slice(p.filters.data_mut(), g.filters.data(), v.filters.data_mut(), sgd)?;
                    sgd_step_slice(&mut p.bias, &g.bias, &mut v.bias, sgd)?;
                }
                (None, None, None) => {}
                _ => return Err(shape_err("gradient layout does not match the model")),
            }
        }
        Ok(())
    }

    fn joint(
        &self,
        batch: &Tensor<T>,
        s1_labels: &[usize],
        s2_labels: &[usize],
        alpha: f64,
        kind: S2LossKind,
        want_grads: bool,
    ) -> Result<(LossReport, Option<Gradients<T>>)> {
        let (n, c, _, _) = batch.dims4()?;
        if c != self.input_channels {
            return Err(shape_err(format!(
                "batch has {c} channels, the model expects {}",
                self.input_channels
            )));
        }
        if s2_labels.len() != n {
            return Err(shape_err(format!("{} S2 labels for a batch of {n}", s2_labels.len())));
        }
        let has_s1 = self.has_s1();
        if has_s1 && s1_labels.len() != n {
            return Err(shape_err(format!("{} S1 labels for a batch of {n}", s1_labels.len())));
        }
        let depth = self.segments.len();
        let s1_last = self.s1_last_level();
        let s2_first = self.s2_first_level();

        // S1 forward with caches.
        let mut maps = Vec::with_capacity(s1_last + 1);
        maps.push(batch.clone());
        let mut s1_caches = Vec::with_capacity(s1_last);
        let mut s1_scores = None;
        for seg in &self.segments[..s1_last] {
            let p = self.s1[seg.level - 1].as_ref().expect("S1 prefix");
            let r = seg_forward(&maps[seg.level - 1], p, seg, seg.s1_pre_pool, seg.level == s1_last, want_grads)?;
            if let Some(co) = r.conv_out {
                s1_scores = Some(head_scores(co, "S1")?);
            }
            s1_caches.push(r.cache);
            maps.push(r.out);
        }

        // S2 forward with caches.
        let mut s2_caches = Vec::with_capacity(depth);
        let mut own: Option<Tensor<T>> = None;
        let mut s2_conv_out = None;
        for seg in &self.segments[s2_first - 1..] {
            let p = self.s2[seg.level - 1].as_ref().expect("S2 suffix");
            let input = match ((seg.s2_in_s1 > 0).then(|| &maps[seg.level - 1]), own.take()) {
                (Some(a), Some(b)) => Tensor::concat_channels(a, &b)?,
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b,
                (None, None) => unreachable!("every S2 conv has an input"),
            };
            let r = seg_forward(&input, p, seg, None, seg.level == depth, want_grads)?;
            if let Some(co) = r.conv_out {
                s2_conv_out = Some(co);
            }
            s2_caches.push(r.cache);
            own = Some(r.out);
        }
        let s2_full = head_scores(s2_conv_out.expect("last level reached"), "S2")?;
        let classes = self.s2_class_count();
        let width = s2_full.row_len();
        let offset = width - classes;
        let s2_scores = if offset == 0 {
            s2_full
        } else {
            let mut d = Vec::with_capacity(n * classes);
            for i in 0..n {
                d.extend_from_slice(&s2_full.row(i)[offset..]);
            }
            Tensor::new(vec![n, classes], d)?
        };

        // Losses.
        let (l2, g2) = match kind {
            S2LossKind::CrossEntropy => {
                if classes < 2 {
                    return Err(invalid("cross-entropy needs at least two S2 outputs; use the hinge loss"));
                }
                nn::cross_entropy(&s2_scores, s2_labels)?
            }
            S2LossKind::BinaryHinge => {
                if classes != 1 {
                    return Err(invalid(format!("hinge loss needs one S2 output, got {classes}")));
                }
                let signs: Vec<i8> = s2_labels
                    .iter()
                    .map(|&y| match y {
                        0 => Ok(-1),
                        1 => Ok(1),
                        _ => Err(invalid(format!("hinge label {y} is not 0 or 1"))),
                    })
                    .collect::<Result<_>>()?;
                nn::binary_hinge(&s2_scores, &signs)?
            }
        };
        let (l1, g1) = match &s1_scores {
            Some(s) => {
                let (l, g) = nn::cross_entropy(s, s1_labels)?;
                (l, Some(g))
            }
            None => (0.0, None),
        };
        let (w1, w2) = if has_s1 { (alpha, 1.0 - alpha) } else { (0.0, 1.0) };
        let report = LossReport {
            total: w1 * l1 + w2 * l2,
            s1: l1,
            s2: l2,
        };
        if !want_grads {
            return Ok((report, None));
        }

        // S2 backward.
        let mut g2 = g2;
        g2.scale(T::from_f64_lossy(w2));
        let g_final = if offset == 0 {
            g2
        } else {
            let mut d = vec![T::zero(); n * width];
            for i in 0..n {
                d[i * width + offset..(i + 1) * width].copy_from_slice(g2.row(i));
            }
            Tensor::new(vec![n, width], d)?
        };
        let mut g_maps: Vec<Option<Tensor<T>>> = vec![None; s1_last + 1];
        let mut grads = Gradients {
            s1: vec![None; depth],
            s2: vec![None; depth],
        };
        let mut g = Some(g_final.reshape(vec![n, width, 1, 1])?);
        for (seg, cache) in self.segments[s2_first - 1..].iter().zip(&s2_caches).rev() {
            let p = self.s2[seg.level - 1].as_ref().expect("S2 suffix");
            let cache = cache.as_ref().expect("recorded");
            let cg = if seg.level == depth {
                seg_backward(None, g.take(), cache, p, seg)?
            } else {
                seg_backward(g.take(), None, cache, p, seg)?
            };
            grads.s2[seg.level - 1] = Some(ConvParams {
                filters: cg.filters,
                bias: cg.bias,
            });
            match (seg.s2_in_s1 > 0, seg.s2_in_own > 0) {
                (true, true) => {
                    let (a, b) = cg.input.split_channels(seg.s2_in_s1)?;
                    add_into(&mut g_maps[seg.level - 1], a)?;
                    g = Some(b);
                }
                (true, false) => add_into(&mut g_maps[seg.level - 1], cg.input)?,
                (false, true) => g = Some(cg.input),
                (false, false) => unreachable!(),
            }
        }

        // S1 backward: its own loss enters at the head conv output, the S2
        // loss through every shared map.
        if let Some(mut g1) = g1 {
            g1.scale(T::from_f64_lossy(w1));
            let k = g1.row_len();
            let mut g_head = Some(g1.reshape(vec![n, k, 1, 1])?);
            for (seg, cache) in self.segments[..s1_last].iter().zip(&s1_caches).rev() {
                let p = self.s1[seg.level - 1].as_ref().expect("S1 prefix");
                let cache = cache.as_ref().expect("recorded");
                let g_out = g_maps[seg.level].take();
                let g_conv = if seg.level == s1_last { g_head.take() } else { None };
                if g_out.is_none() && g_conv.is_none() {
                    continue;
                }
                let cg = seg_backward(g_out, g_conv, cache, p, seg)?;
                grads.s1[seg.level - 1] = Some(ConvParams {
                    filters: cg.filters,
                    bias: cg.bias,
                });
                if seg.level > 1 {
                    add_into(&mut g_maps[seg.level - 1], cg.input)?;
                }
            }
        }
        for (slot, p) in grads.s1.iter_mut().zip(&self.s1) {
            if let (None, Some(p)) = (&slot, p) {
                *slot = Some(ConvParams::zeros(p.out_channels(), p.in_channels(), p.filters.shape()[2]));
            }
        }
        Ok((report, Some(grads)))
    }
}
