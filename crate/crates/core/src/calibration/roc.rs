use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// One operating point: examples with `score ≥ threshold` are accepted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint<T> {
    pub threshold: T,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve of `scores` against binary `labels`.
///
/// Points come in descending threshold order starting at `(+∞, 0, 0)`;
/// every distinct score contributes exactly one point, so tied scores
/// collapse. The last point (the minimum score) has `tpr = fpr = 1`.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Vec<RocPoint<T>>> {
    if scores.len() != labels.len() {
        return Err(invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Calibration(format!(
            "ROC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));

    let mut points = vec![RocPoint {
        threshold: T::infinity(),
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        });
    }
    Ok(points)
}

/// The operating point with the largest threshold whose TPR reaches
/// `target_tpr`, i.e. the most aggressive rejection that keeps the recall.
pub fn pick_threshold<T: Scalar>(roc: &[RocPoint<T>], target_tpr: f64) -> Result<RocPoint<T>> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(invalid(format!("target TPR {target_tpr} outside (0, 1]")));
    }
    roc.iter()
        .find(|p| p.tpr >= target_tpr)
        .copied()
        .ok_or_else(|| Error::Calibration(format!("no operating point reaches TPR {target_tpr}")))
}
