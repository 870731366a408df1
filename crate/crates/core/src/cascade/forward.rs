use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::model::{CascadeModel, ConvParams, PostOp, Segment};
use crate::arch::Variant;
use crate::calibration::ThresholdSet;
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{self, counters, PoolIndex};
use crate::scalar::Scalar;
use crate::sparse::{apply_plan, plan_compaction, scatter_back_values, PassMask};
use crate::tensor::Tensor;

pub(crate) enum PostCache<T> {
    Relu(Tensor<T>),
    Pool(PoolIndex),
}

/// What a segment's backward pass needs from its forward pass.
pub(crate) struct SegCache<T> {
    pub conv_input: Tensor<T>,
    pub pre_pool: Option<PoolIndex>,
    pub post: Vec<PostCache<T>>,
}

pub(crate) struct SegOut<T> {
    pub out: Tensor<T>,
    pub conv_out: Option<Tensor<T>>,
    pub cache: Option<SegCache<T>>,
}

/// Conv (with an optional pre-pool) followed by the segment's post ops.
pub(crate) fn seg_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    seg: &Segment,
    pre_pool: Option<(usize, usize)>,
    keep_conv_out: bool,
    record: bool,
) -> Result<SegOut<T>> {
    let mut pre_index = None;
    let pooled;
    let conv_in = match pre_pool {
        Some((w, s)) => {
            let (y, idx) = nn::maxpool(x, w, s)?;
            pre_index = Some(idx);
            pooled = y;
            &pooled
        }
        None => x,
    };
    let conv_out = nn::conv_forward(conv_in, &p.filters, &p.bias, seg.pad, seg.stride)?;
    let mut post_cache = Vec::new();
    let kept = keep_conv_out.then(|| conv_out.clone());
    let mut cur = conv_out;
    for op in &seg.post {
        match *op {
            PostOp::Relu => {
                let y = nn::relu(&cur);
                if record {
                    post_cache.push(PostCache::Relu(std::mem::replace(&mut cur, y)));
                } else {
                    cur = y;
                }
            }
            PostOp::Pool { window, stride } => {
                let (y, idx) = nn::maxpool(&cur, window, stride)?;
                if record {
                    post_cache.push(PostCache::Pool(idx));
                }
                cur = y;
            }
        }
    }
    let cache = record.then(|| SegCache {
        conv_input: conv_in.clone(),
        pre_pool: pre_index,
        post: post_cache,
    });
    Ok(SegOut {
        out: cur,
        conv_out: kept,
        cache,
    })
}

/// `n × K × 1 × 1` head output to `n × K` scores.
pub(crate) fn head_scores<T: Scalar>(conv_out: Tensor<T>, stage: &str) -> Result<Tensor<T>> {
    let (n, k, h, w) = conv_out.dims4()?;
    if (h, w) != (1, 1) {
        return Err(shape_err(format!(
            "the final {stage} convolution must reduce the map to 1×1, got {h}×{w}"
        )));
    }
    conv_out.reshape(vec![n, k])
}

/// S1 class scores plus the S1 feature maps S2 may read.
#[derive(Clone, Debug, PartialEq)]
pub struct S1Output<T> {
    /// Raw `n × |K|` scores of the S1 head (before softmax).
    pub scores: Tensor<T>,
    /// `shared_maps[l]` is the S1 map after level `l` and its ReLU/pooling,
    /// i.e. what level `l + 1` consumes; `shared_maps[0]` is the input.
    pub shared_maps: Vec<Tensor<T>>,
}

impl<T: Scalar> S1Output<T> {
    pub fn probabilities(&self) -> Tensor<T> {
        nn::softmax_rows(&self.scores)
    }
}

/// S2 scores of the surviving examples.
#[derive(Clone, Debug, PartialEq)]
pub struct S2Scores<T> {
    /// `k × classes` scores, row `j` belonging to batch row `rows[j]`.
    pub scores: Tensor<T>,
    pub rows: Vec<usize>,
}

/// Per-level feature maps of both stages with every example passing S1.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    /// `s1_maps[l - 1]`: output of S1 level `l` after its ReLU/pooling.
    pub s1_maps: Vec<Option<Tensor<T>>>,
    pub s2_maps: Vec<Option<Tensor<T>>>,
    pub s1_scores: Option<Tensor<T>>,
    pub s2_scores: Tensor<T>,
}

/// Cascade decision for one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prediction {
    /// Rejected by S1; never a valid S2 class.
    Rejected,
    Class(usize),
}

impl Prediction {
    pub fn class(self) -> Option<usize> {
        match self {
            Prediction::Rejected => None,
            Prediction::Class(c) => Some(c),
        }
    }
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prediction::Rejected => f.write_str("reject"),
            Prediction::Class(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferOptions {
    /// Move survivors into one contiguous block before S2. When off, S2
    /// runs on each survivor separately.
    pub compaction: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { compaction: true }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferStats {
    pub batch: usize,
    pub passed: usize,
    /// Pass fraction of this batch.
    pub p: f64,
    pub s1_seconds: f64,
    pub compaction_seconds: f64,
    pub s2_seconds: f64,
    /// Convolution MACs executed for this batch.
    pub macs: u64,
    /// S2 convolution invocations.
    pub s2_conv_calls: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferOutput {
    pub predictions: Vec<Prediction>,
    pub mask: PassMask,
    pub stats: InferStats,
}

/// Class from a row of S2 scores: the sign for a single hinge output,
/// the first maximum otherwise.
pub fn decide<T: Scalar>(row: &[T]) -> usize {
    if row.len() == 1 {
        return usize::from(row[0] > T::zero());
    }
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> CascadeModel<T> {
    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let (_, c, _, _) = batch.dims4()?;
        if c != self.input_channels {
            return Err(shape_err(format!(
                "batch has {c} channels, the model expects {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    /// Runs S1 on the whole batch.
    pub fn forward_s1(&self, batch: &Tensor<T>) -> Result<S1Output<T>> {
        self.check_input(batch)?;
        let last = self.s1_last_level();
        if last == 0 {
            return Err(Error::Unsupported("a monolithic model has no S1 stage".into()));
        }
        let mut maps = Vec::with_capacity(last + 1);
        maps.push(batch.clone());
        let mut scores = None;
        for seg in &self.segments[..last] {
            let p = self.s1[seg.level - 1].as_ref().expect("S1 is a contiguous prefix");
            let r = seg_forward(&maps[seg.level - 1], p, seg, seg.s1_pre_pool, seg.level == last, false)?;
            if let Some(c) = r.conv_out {
                scores = Some(head_scores(c, "S1")?);
            }
            maps.push(r.out);
        }
        Ok(S1Output {
            scores: scores.expect("head reached"),
            shared_maps: maps,
        })
    }

    /// Levels `l − 1` whose S1 map some S2 level `l` reads.
    fn shared_levels(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.s2_out > 0 && s.s2_in_s1 > 0)
            .map(|s| s.level - 1)
            .collect()
    }

    /// Runs S2 over rows whose shared inputs are given per level.
    fn s2_path(
        &self,
        shared: &[Option<Tensor<T>>],
        mut trace: Option<&mut Vec<Option<Tensor<T>>>>,
        penultimate: Option<&mut Option<Tensor<T>>>,
    ) -> Result<Tensor<T>> {
        let first = self.s2_first_level();
        let last = self.segments.len();
        let mut own: Option<Tensor<T>> = None;
        let mut final_out = None;
        let mut pen = None;
        for seg in &self.segments[first - 1..] {
            let p = self.s2[seg.level - 1].as_ref().expect("S2 is a contiguous suffix");
            let s1_part = (seg.s2_in_s1 > 0).then(|| {
                shared[seg.level - 1]
                    .as_ref()
                    .expect("shared map provided for every level S2 reads")
            });
            let input = match (s1_part, own.take()) {
                (Some(a), Some(b)) => Tensor::concat_channels(a, &b)?,
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b,
                (None, None) => unreachable!("every S2 conv has an input"),
            };
            let is_last = seg.level == last;
            if is_last && penultimate.is_some() {
                pen = Some(input.clone());
            }
            let r = seg_forward(&input, p, seg, None, is_last, false)?;
            if let Some(t) = trace.as_deref_mut() {
                t[seg.level - 1] = Some(r.out.clone());
            }
            if is_last {
                final_out = r.conv_out;
            }
            own = Some(r.out);
        }
        if let Some(slot) = penultimate {
            *slot = pen;
        }
        let scores = head_scores(final_out.expect("last level reached"), "S2")?;
        self.s2_class_slice(scores)
    }

    /// Non-sharing S2 has monolithic widths; its class scores are the last
    /// `n_L^{S2}` output channels.
    fn s2_class_slice(&self, scores: Tensor<T>) -> Result<Tensor<T>> {
        let classes = self.s2_class_count();
        let width = scores.row_len();
        if width == classes {
            return Ok(scores);
        }
        let n = scores.batch();
        let mut data = Vec::with_capacity(n * classes);
        for i in 0..n {
            data.extend_from_slice(&scores.row(i)[width - classes..]);
        }
        Tensor::new(vec![n, classes], data)
    }

    fn shared_from(&self, maps: &[Tensor<T>]) -> Vec<Option<Tensor<T>>> {
        let mut shared = vec![None; self.segments.len()];
        for l in self.shared_levels() {
            shared[l] = Some(maps[l].clone());
        }
        shared
    }

    /// S2 scores for the rows selected by `mask`, reading S1's maps.
    ///
    /// With compaction the maps in `s1` are rearranged in place (survivors
    /// moved into one block). An all-false mask runs no S2 convolution.
    pub fn forward_s2_shared(
        &self,
        s1: &mut S1Output<T>,
        mask: &PassMask,
        opts: InferOptions,
    ) -> Result<S2Scores<T>> {
        self.s2_shared_timed(s1, mask, opts).map(|(s, _)| s)
    }

    fn s2_shared_timed(
        &self,
        s1: &mut S1Output<T>,
        mask: &PassMask,
        opts: InferOptions,
    ) -> Result<(S2Scores<T>, Duration)> {
        let n = s1.shared_maps[0].batch();
        if mask.len() != n {
            return Err(shape_err(format!(
                "mask has {} flags for a batch of {n}",
                mask.len()
            )));
        }
        let classes = self.s2_class_count();
        let k = mask.count();
        if k == 0 {
            let empty = S2Scores {
                scores: Tensor::zeros(&[0, classes]),
                rows: Vec::new(),
            };
            return Ok((empty, Duration::ZERO));
        }
        let levels = self.shared_levels();
        if opts.compaction {
            let t0 = Instant::now();
            let plan = plan_compaction(mask);
            let mut taken: Vec<Tensor<T>> = levels
                .iter()
                .map(|&l| std::mem::replace(&mut s1.shared_maps[l], Tensor::zeros(&[0])))
                .collect();
            let windows = apply_plan(&plan, &mut taken);
            for (&l, t) in levels.iter().zip(taken) {
                s1.shared_maps[l] = t;
            }
            let mut shared = vec![None; self.segments.len()];
            for (&l, w) in levels.iter().zip(windows?) {
                shared[l] = Some(w);
            }
            let compaction = t0.elapsed();
            let scores = self.s2_path(&shared, None, None)?;
            let out = S2Scores {
                scores,
                rows: plan.gather_map().to_vec(),
            };
            Ok((out, compaction))
        } else {
            let rows = mask.indices();
            let mut outs = Vec::with_capacity(k);
            for &i in &rows {
                let mut shared = vec![None; self.segments.len()];
                for &l in &levels {
                    shared[l] = Some(s1.shared_maps[l].select_rows(&[i])?);
                }
                outs.push(self.s2_path(&shared, None, None)?);
            }
            let out = S2Scores {
                scores: Tensor::stack_rows(&outs)?,
                rows,
            };
            Ok((out, Duration::ZERO))
        }
    }

    /// Both stages on every example; `s1_scores` is `None` for a monolithic model.
    pub fn forward_trace(&self, batch: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.check_input(batch)?;
        let depth = self.segments.len();
        let (s1_scores, maps) = if self.has_s1() {
            let out = self.forward_s1(batch)?;
            (Some(out.scores), out.shared_maps)
        } else {
            (None, vec![batch.clone()])
        };
        let mut s1_maps = vec![None; depth];
        for (l, m) in maps.iter().enumerate().skip(1) {
            s1_maps[l - 1] = Some(m.clone());
        }
        let mut s2_maps = vec![None; depth];
        let s2_scores = self.s2_path(&self.shared_from(&maps), Some(&mut s2_maps), None)?;
        Ok(ForwardTrace {
            s1_maps,
            s2_maps,
            s1_scores,
            s2_scores,
        })
    }

    /// S2 scores for every example (the full pipeline without rejection).
    pub fn forward_full(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let maps = if self.has_s1() && !self.shared_levels().iter().all(|&l| l == 0) {
            self.forward_s1(batch)?.shared_maps
        } else {
            self.check_input(batch)?;
            vec![batch.clone()]
        };
        self.s2_path(&self.shared_from(&maps), None, None)
    }

    /// Input of the final S2 convolution, flattened to `n × D`, together
    /// with the S2 scores.
    pub fn penultimate_features(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let maps = if self.has_s1() {
            self.forward_s1(batch)?.shared_maps
        } else {
            self.check_input(batch)?;
            vec![batch.clone()]
        };
        let mut pen = None;
        let scores = self.s2_path(&self.shared_from(&maps), None, Some(&mut pen))?;
        Ok((nn::flatten(&pen.expect("penultimate recorded")), scores))
    }

    /// Class-averaged penultimate activations (`classes × D`), averaged over
    /// the examples the model classifies correctly; a class the model never
    /// gets right falls back to all of its examples.
    pub fn class_mean_activations(
        &self,
        images: &Tensor<T>,
        labels: &[usize],
        classes: usize,
        chunk: usize,
    ) -> Result<Tensor<T>> {
        if labels.len() != images.batch() {
            return Err(shape_err(format!(
                "{} labels for {} images",
                labels.len(),
                images.batch()
            )));
        }
        let chunk = chunk.max(1);
        let mut sum_ok: Vec<Vec<f64>> = vec![Vec::new(); classes];
        let mut sum_all: Vec<Vec<f64>> = vec![Vec::new(); classes];
        let (mut n_ok, mut n_all) = (vec![0usize; classes], vec![0usize; classes]);
        let mut start = 0;
        while start < images.batch() {
            let end = (start + chunk).min(images.batch());
            let (feats, scores) = self.penultimate_features(&images.slice_rows(start..end)?)?;
            for j in 0..end - start {
                let y = labels[start + j];
                if y >= classes {
                    return Err(invalid(format!("label {y} out of range for {classes} classes")));
                }
                let row = feats.row(j);
                let add = |acc: &mut Vec<f64>| {
                    if acc.is_empty() {
                        acc.resize(row.len(), 0.0);
                    }
                    acc.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64());
                };
                add(&mut sum_all[y]);
                n_all[y] += 1;
                if decide(scores.row(j)) == y {
                    add(&mut sum_ok[y]);
                    n_ok[y] += 1;
                }
            }
            start = end;
        }
        let mut rows = Vec::with_capacity(classes);
        for c in 0..classes {
            let (sum, cnt) = if n_ok[c] > 0 {
                (&sum_ok[c], n_ok[c])
            } else if n_all[c] > 0 {
                (&sum_all[c], n_all[c])
            } else {
                return Err(invalid(format!("class {c} has no examples")));
            };
            rows.extend(sum.iter().map(|s| T::from_f64_lossy(s / cnt as f64)));
        }
        let d = rows.len() / classes.max(1);
        Tensor::new(vec![classes, d], rows)
    }

    /// Runs S1, applies `mask` and S2 on the survivors.
    pub fn run_with_mask(
        &self,
        batch: &Tensor<T>,
        mask: &PassMask,
        opts: InferOptions,
    ) -> Result<(Vec<Prediction>, InferStats)> {
        self.run(batch, |_| Ok(mask.clone()), opts).map(|(p, _, s)| (p, s))
    }

    fn run(
        &self,
        batch: &Tensor<T>,
        make_mask: impl FnOnce(&S1Output<T>) -> Result<PassMask>,
        opts: InferOptions,
    ) -> Result<(Vec<Prediction>, PassMask, InferStats)> {
        self.check_input(batch)?;
        let n = batch.batch();
        let before = counters::snapshot();
        let t0 = Instant::now();
        let (mut s1, mask) = if self.has_s1() {
            let s1 = self.forward_s1(batch)?;
            let mask = make_mask(&s1)?;
            (s1, mask)
        } else {
            let s1 = S1Output {
                scores: Tensor::zeros(&[n, 1]),
                shared_maps: vec![batch.clone()],
            };
            (s1, PassMask::all(n, true))
        };
        if mask.len() != n {
            return Err(shape_err(format!("mask has {} flags for a batch of {n}", mask.len())));
        }
        let s1_time = t0.elapsed();
        let mid = counters::snapshot();
        let t1 = Instant::now();
        let (s2, compaction) = self.s2_shared_timed(&mut s1, &mask, opts)?;
        let s2_time = t1.elapsed();
        let after = counters::snapshot();
        let decisions: Vec<Prediction> =
            (0..s2.rows.len()).map(|j| Prediction::Class(decide(s2.scores.row(j)))).collect();
        let predictions = scatter_back_values(&decisions, &s2.rows, n, Prediction::Rejected)?;
        let stats = InferStats {
            batch: n,
            passed: mask.count(),
            p: mask.fraction(),
            s1_seconds: s1_time.as_secs_f64(),
            compaction_seconds: compaction.as_secs_f64(),
            s2_seconds: (s2_time - compaction).as_secs_f64(),
            macs: (after - before).macs,
            s2_conv_calls: (after - mid).calls,
        };
        Ok((predictions, mask, stats))
    }

    /// Cascaded inference: S1 scores every example, the ones whose softmax
    /// probability reaches the threshold of any class of interest go on to
    /// S2, everything else is rejected. A monolithic model ignores the
    /// thresholds and classifies every example.
    pub fn infer_cascade(
        &self,
        batch: &Tensor<T>,
        thresholds: &ThresholdSet<T>,
        opts: InferOptions,
    ) -> Result<InferOutput> {
        if self.has_s1() {
            let k = self.s1_class_count();
            if thresholds.is_empty() || thresholds.classes().iter().any(|&u| u >= k) {
                return Err(invalid(format!(
                    "thresholds cover classes {:?}, S1 has {k} classes",
                    thresholds.classes()
                )));
            }
        }
        let (predictions, mask, stats) =
            self.run(batch, |s1| thresholds.pass_mask(&s1.probabilities()), opts)?;
        Ok(InferOutput {
            predictions,
            mask,
            stats,
        })
    }
}

impl<T: Scalar> CascadeModel<T> {
    /// `true` for sharing models, whose S2 reads S1 maps beyond the input.
    pub fn shares_features(&self) -> bool {
        self.spec.variant == Variant::Sharing && self.shared_levels().iter().any(|&l| l > 0)
    }
}
