//! Batch compaction for the examples that pass S1.
//!
//! After S1 the pass flags form an irregular pattern of holes. S2 runs
//! fastest on one contiguous block, so the survivors (and every shared
//! feature map) are moved into a window of length `k = popcount(mask)`.
//! The window is chosen to already contain as many survivors as possible,
//! which makes the number of row copies `k − max_window_ones` minimal.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-example pass flags for one batch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PassMask {
    flags: Vec<bool>,
}

impl PassMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn all(len: usize, value: bool) -> Self {
        Self {
            flags: vec![value; len],
        }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Pass fraction `p` of this batch (zero for an empty batch).
    pub fn fraction(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.flags.len() as f64
        }
    }

    /// Indices of the flagged rows in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| self.flags[i]).collect()
    }
}

impl From<Vec<bool>> for PassMask {
    fn from(flags: Vec<bool>) -> Self {
        Self::new(flags)
    }
}

impl FromIterator<bool> for PassMask {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Minimal-move rearrangement of a masked batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionPlan {
    pub batch: usize,
    pub window_start: usize,
    pub window_len: usize,
    /// `(src_row, dst_row)` copies. Sources lie outside the window,
    /// destinations are holes inside it, so the copies commute.
    pub moves: Vec<(usize, usize)>,
    gather: Vec<usize>,
}

impl CompactionPlan {
    pub fn window(&self) -> std::ops::Range<usize> {
        self.window_start..self.window_start + self.window_len
    }

    /// Original batch index of each row of the compacted window.
    pub fn gather_map(&self) -> &[usize] {
        &self.gather
    }

    pub fn is_identity(&self) -> bool {
        self.moves.is_empty()
    }
}

/// Plans the compaction and reports how many times the mask was traversed.
pub fn plan_compaction_instrumented(mask: &PassMask) -> (CompactionPlan, usize) {
    let flags = mask.flags();
    let n = flags.len();
    let mut passes = 0;

    // Pass 1: survivor positions (and therefore k).
    passes += 1;
    let ones: Vec<usize> = flags
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect();
    let k = ones.len();

    // Pass 2: slide a window of length k; the trailing edge is tracked
    // through the survivor list so every flag is read once.
    passes += 1;
    let (mut inside, mut best, mut best_start) = (0usize, 0usize, 0usize);
    let mut tail = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if k == 0 {
            break;
        }
        if f {
            inside += 1;
        }
        if i >= k {
            let leaving = i - k;
            if tail < k && ones[tail] == leaving {
                inside -= 1;
                tail += 1;
            }
        }
        if i + 1 >= k && inside > best {
            best = inside;
            best_start = i + 1 - k;
        }
    }

    let window = best_start..best_start + k;
    let outside = ones.iter().copied().filter(|i| !window.contains(i));
    let mut ones_in = ones.iter().copied().filter(|i| window.contains(i)).peekable();
    let mut holes = Vec::with_capacity(k - best);
    let mut gather = Vec::with_capacity(k);
    for slot in window.clone() {
        if ones_in.peek() == Some(&slot) {
            ones_in.next();
            gather.push(slot);
        } else {
            holes.push(slot);
            gather.push(usize::MAX);
        }
    }
    let moves: Vec<(usize, usize)> = outside.zip(holes.iter().copied()).collect();
    for &(src, dst) in &moves {
        gather[dst - best_start] = src;
    }
    debug_assert!(gather.iter().all(|&g| g < n));
    (
        CompactionPlan {
            batch: n,
            window_start: best_start,
            window_len: k,
            moves,
            gather,
        },
        passes,
    )
}

/// Leftmost window of length `popcount(mask)` holding the most survivors,
/// with each outside survivor copied into a distinct hole in ascending order.
pub fn plan_compaction(mask: &PassMask) -> CompactionPlan {
    plan_compaction_instrumented(mask).0
}

/// Executes the plan's copies on `tensor` in place.
pub fn apply_plan_in_place<T: Scalar>(plan: &CompactionPlan, tensor: &mut Tensor<T>) -> Result<()> {
    if tensor.batch() != plan.batch {
        return Err(shape_err(format!(
            "tensor batch {} does not match mask length {}",
            tensor.batch(),
            plan.batch
        )));
    }
    let r = tensor.row_len();
    let data = tensor.data_mut();
    for &(src, dst) in &plan.moves {
        data.copy_within(src * r..(src + 1) * r, dst * r);
    }
    Ok(())
}

/// Applies the plan to every tensor and returns the compacted window of each.
/// All tensors must share the mask's batch extent; none is touched otherwise.
pub fn apply_plan<T: Scalar>(plan: &CompactionPlan, tensors: &mut [Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    if let Some(bad) = tensors.iter().find(|t| t.batch() != plan.batch) {
        return Err(shape_err(format!(
            "tensor batch {} does not match mask length {}",
            bad.batch(),
            plan.batch
        )));
    }
    tensors
        .iter_mut()
        .map(|t| {
            apply_plan_in_place(plan, t)?;
            t.slice_rows(plan.window())
        })
        .collect()
}

/// Places per-survivor values back at their batch positions and fills the
/// rest with `reject`.
pub fn scatter_back_values<V: Clone>(values: &[V], gather_map: &[usize], batch: usize, reject: V) -> Result<Vec<V>> {
    if values.len() != gather_map.len() {
        return Err(shape_err(format!(
            "{} values for {} survivors",
            values.len(),
            gather_map.len()
        )));
    }
    let mut out = vec![reject; batch];
    for (v, &i) in values.iter().zip(gather_map) {
        let slot = out
            .get_mut(i)
            .ok_or_else(|| shape_err(format!("gather index {i} out of bounds for batch {batch}")))?;
        *slot = v.clone();
    }
    Ok(out)
}

/// Tensor form of [`scatter_back_values`]: row `j` of `s2_output` goes to
/// batch row `gather_map[j]`, every other row is filled with `reject_value`.
pub fn scatter_back<T: Scalar>(
    s2_output: &Tensor<T>,
    gather_map: &[usize],
    batch_size: usize,
    reject_value: T,
) -> Result<Tensor<T>> {
    if s2_output.batch() != gather_map.len() {
        return Err(shape_err(format!(
            "S2 output has {} rows for {} survivors",
            s2_output.batch(),
            gather_map.len()
        )));
    }
    let mut shape = s2_output.shape().to_vec();
    shape[0] = batch_size;
    let mut out = Tensor::full(&shape, reject_value);
    let r = s2_output.row_len();
    for (j, &i) in gather_map.iter().enumerate() {
        if i >= batch_size {
            return Err(shape_err(format!(
                "gather index {i} out of bounds for batch {batch_size}"
            )));
        }
        out.data_mut()[i * r..(i + 1) * r].copy_from_slice(s2_output.row(j));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> PassMask {
        bits.iter().map(|&b| b == 1).collect()
    }

    /// Minimum copies over every window of length k, by enumeration.
    fn brute_force(bits: &[u8]) -> usize {
        let k = bits.iter().filter(|&&b| b == 1).count();
        if k == 0 {
            return 0;
        }
        (0..=bits.len() - k)
            .map(|s| k - bits[s..s + k].iter().filter(|&&b| b == 1).count())
            .min()
            .unwrap()
    }

    #[test]
    fn small_examples_match_enumeration() {
        for bits in [&[1u8, 0, 1, 1, 0][..], &[1, 0, 0, 0, 1], &[1, 1, 1], &[0, 0, 0], &[]] {
            let plan = plan_compaction(&mask(bits));
            assert_eq!(plan.moves.len(), brute_force(bits), "{bits:?}");
        }
        let plan = plan_compaction(&mask(&[1, 0, 1, 1, 0]));
        assert_eq!((plan.window_start, plan.window_len), (0, 3));
        assert_eq!(plan.moves, vec![(3, 1)]);
        assert_eq!(plan.gather_map(), &[0, 3, 2]);
    }

    #[test]
    fn ties_pick_leftmost_window() {
        let plan = plan_compaction(&mask(&[1, 0, 0, 0, 1]));
        assert_eq!(plan.window_start, 0);
        assert_eq!(plan.moves, vec![(4, 1)]);
    }

    #[test]
    fn two_passes_even_when_empty() {
        assert_eq!(plan_compaction_instrumented(&mask(&[0, 0])).1, 2);
        assert_eq!(plan_compaction_instrumented(&mask(&[])).1, 2);
    }

    #[test]
    fn apply_moves_exactly_planned_rows() {
        let m = mask(&[1, 0, 1, 1, 0]);
        let plan = plan_compaction(&m);
        let orig = Tensor::<f32>::from_fn(&[5, 2], |i| (i / 2) as f32);
        let mut t = vec![orig.clone()];
        let windows = apply_plan(&plan, &mut t).unwrap();
        let changed = (0..5).filter(|&i| t[0].row(i) != orig.row(i)).count();
        assert_eq!(changed, 1);
        let mut rows: Vec<f32> = (0..3).map(|j| windows[0].row(j)[0]).collect();
        rows.sort_by(f32::total_cmp);
        assert_eq!(rows, [0.0, 2.0, 3.0]);
        let back = scatter_back(&windows[0], plan.gather_map(), 5, -1.0).unwrap();
        for i in 0..5 {
            let expect = if m.get(i) { orig.row(i)[0] } else { -1.0 };
            assert_eq!(back.row(i), &[expect, expect]);
        }
    }

    #[test]
    fn batch_mismatch_is_rejected() {
        let plan = plan_compaction(&mask(&[1, 0]));
        let mut t = vec![Tensor::<f32>::zeros(&[3, 1])];
        assert!(apply_plan(&plan, &mut t).is_err());
        assert!(scatter_back(&Tensor::<f32>::zeros(&[2, 1]), plan.gather_map(), 2, 0.0).is_err());
    }

    #[test]
    fn scatter_edge_cases() {
        let empty = Tensor::<f32>::zeros(&[0, 3]);
        let out = scatter_back(&empty, &[], 4, 7.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
        let full = Tensor::<f32>::from_fn(&[3, 1], |i| i as f32);
        assert_eq!(scatter_back(&full, &[0, 1, 2], 3, 0.0).unwrap(), full);
    }
}
