use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::roc::{pick_threshold, roc_curve};
use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::sparse::PassMask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry<T> {
    pub threshold: T,
    pub target_tpr: f64,
    pub achieved_tpr: f64,
    pub achieved_fpr: f64,
}

/// Thresholds for the S1 classes of interest `U`, keyed by S1 class id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet<T> {
    entries: BTreeMap<usize, ThresholdEntry<T>>,
}

const HEADER: &str = "# class target_tpr threshold achieved_tpr achieved_fpr";

impl<T: Scalar> ThresholdSet<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The same raw threshold for every listed class. `-∞` passes
    /// everything, `+∞` rejects everything. Achieved rates are unknown (NaN).
    pub fn uniform(classes: &[usize], threshold: T) -> Self {
        let mut set = Self::new();
        for &u in classes {
            set.insert(
                u,
                ThresholdEntry {
                    threshold,
                    target_tpr: f64::NAN,
                    achieved_tpr: f64::NAN,
                    achieved_fpr: f64::NAN,
                },
            );
        }
        set
    }

    /// Per-class thresholds from S1 probabilities (`n × K`) and S1 labels.
    /// `targets` lists `(class, target TPR)` for every class of interest.
    pub fn calibrate(probs: &Tensor<T>, labels: &[usize], targets: &[(usize, f64)]) -> Result<Self> {
        let n = probs.batch();
        let k = probs.row_len();
        if labels.len() != n {
            return Err(shape_err(format!("{} labels for {n} score rows", labels.len())));
        }
        if targets.is_empty() {
            return Err(invalid("no class of interest to calibrate"));
        }
        let mut set = Self::new();
        for &(u, target) in targets {
            if u >= k {
                return Err(invalid(format!("class {u} has no score column ({k} columns)")));
            }
            let scores: Vec<T> = (0..n).map(|i| probs.row(i)[u]).collect();
            let truth: Vec<bool> = labels.iter().map(|&l| l == u).collect();
            let roc = roc_curve(&scores, &truth).map_err(|e| match e {
                Error::Calibration(m) => Error::Calibration(format!("class {u}: {m}")),
                other => other,
            })?;
            let p = pick_threshold(&roc, target)?;
            set.insert(
                u,
                ThresholdEntry {
                    threshold: p.threshold,
                    target_tpr: target,
                    achieved_tpr: p.tpr,
                    achieved_fpr: p.fpr,
                },
            );
        }
        Ok(set)
    }

    pub fn insert(&mut self, class: usize, entry: ThresholdEntry<T>) {
        self.entries.insert(class, entry);
    }

    pub fn get(&self, class: usize) -> Option<&ThresholdEntry<T>> {
        self.entries.get(&class)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &ThresholdEntry<T>)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    pub fn classes(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `mask[i] = OR over u of (score[i][u] ≥ threshold[u])`.
    pub fn pass_mask(&self, probs: &Tensor<T>) -> Result<PassMask> {
        let k = probs.row_len();
        if let Some(&u) = self.entries.keys().find(|&&u| u >= k) {
            return Err(invalid(format!(
                "threshold for class {u} but scores have only {k} columns"
            )));
        }
        if self.entries.is_empty() {
            return Err(invalid("empty threshold set"));
        }
        Ok((0..probs.batch())
            .map(|i| {
                let row = probs.row(i);
                self.entries.iter().any(|(&u, e)| row[u] >= e.threshold)
            })
            .collect())
    }

    /// Whitespace-separated table, one class per line. Floats are written
    /// in their shortest round-trip form.
    pub fn to_table(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for (u, e) in &self.entries {
            let _ = writeln!(
                s,
                "{u} {} {} {} {}",
                e.target_tpr, e.threshold, e.achieved_tpr, e.achieved_fpr
            );
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut set = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("threshold table line {}: {what}", no + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [u, target, thr, tpr, fpr] = fields[..] else {
                return Err(bad("expected 5 columns"));
            };
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
            let class = u.parse::<usize>().map_err(|_| bad("class id must be an integer"))?;
            let threshold = thr
                .parse::<T>()
                .map_err(|_| bad(&format!("`{thr}` is not a number")))?;
            if set.entries.contains_key(&class) {
                return Err(bad("duplicate class"));
            }
            set.insert(
                class,
                ThresholdEntry {
                    threshold,
                    target_tpr: f(target)?,
                    achieved_tpr: f(tpr)?,
                    achieved_fpr: f(fpr)?,
                },
            );
        }
        if set.is_empty() {
            return Err(Error::Format("threshold table has no entries".into()));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_table())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_table(&std::fs::read_to_string(path)?)
    }
}

pub fn pass_mask<T: Scalar>(s1_probs: &Tensor<T>, thresholds: &ThresholdSet<T>) -> Result<PassMask> {
    thresholds.pass_mask(s1_probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f32]]) -> Tensor<f32> {
        let k = rows[0].len();
        Tensor::new(vec![rows.len(), k], rows.concat()).unwrap()
    }

    #[test]
    fn single_class_threshold() {
        let t = ThresholdSet::uniform(&[1], 0.5f32);
        let m = t.pass_mask(&probs(&[&[0.8, 0.2], &[0.2, 0.8]])).unwrap();
        assert_eq!(m.flags(), &[false, true]);
    }

    #[test]
    fn or_over_classes() {
        let mut t = ThresholdSet::uniform(&[0], 0.9f32);
        t.insert(1, ThresholdSet::uniform(&[1], 0.6f32).get(1).copied().unwrap());
        let m = t
            .pass_mask(&probs(&[&[0.95, 0.05, 0.0], &[0.3, 0.6, 0.1], &[0.2, 0.3, 0.5]]))
            .unwrap();
        assert_eq!(m.flags(), &[true, true, false]);
    }

    #[test]
    fn missing_column_is_rejected() {
        let t = ThresholdSet::uniform(&[3], 0.5f32);
        assert!(t.pass_mask(&probs(&[&[0.5, 0.5]])).is_err());
    }

    #[test]
    fn calibrated_entries_meet_target() {
        let p = probs(&[&[0.1, 0.9], &[0.3, 0.7], &[0.6, 0.4], &[0.8, 0.2], &[0.45, 0.55]]);
        let labels = [1, 1, 0, 0, 1];
        let set = ThresholdSet::calibrate(&p, &labels, &[(1, 1.0)]).unwrap();
        let e = set.get(1).unwrap();
        assert_eq!(e.threshold, 0.55);
        assert_eq!(e.achieved_tpr, 1.0);
        assert_eq!(e.achieved_fpr, 0.0);
    }

    #[test]
    fn table_round_trip_is_exact() {
        let mut set = ThresholdSet::<f32>::new();
        set.insert(
            2,
            ThresholdEntry {
                threshold: 0.123_456_79,
                target_tpr: 0.95,
                achieved_tpr: 0.96,
                achieved_fpr: 1.0 / 3.0,
            },
        );
        set.insert(0, ThresholdSet::uniform(&[0], f32::NEG_INFINITY).get(0).copied().unwrap());
        let text = set.to_table();
        let back = ThresholdSet::<f32>::from_table(&text).unwrap();
        assert_eq!(back.to_table(), text);
        assert_eq!(back.get(2), set.get(2));
        assert!(ThresholdSet::<f32>::from_table("0 1 2").is_err());
    }
}
