use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::CascadeModel;
use super::train::{JointLossConfig, LossReport};
use crate::error::{invalid, shape_err, Result};
use crate::nn::SgdConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Epoch loop settings. The learning rate is multiplied by `lr_decay` every
/// `lr_step` epochs (`lr_step = 0` keeps it constant).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: JointLossConfig,
    pub sgd: SgdConfig,
    pub lr_step: usize,
    pub lr_decay: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            loss: JointLossConfig::default(),
            sgd: SgdConfig::default(),
            lr_step: 0,
            lr_decay: 0.1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.sgd.validate()?;
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(invalid(format!("lr decay must be positive, got {}", self.lr_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_step {
            0 => self.sgd.lr,
            step => self.sgd.lr * self.lr_decay.powi((epoch / step) as i32),
        }
    }
}

/// Example-weighted mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
}

/// Trains `model` for `cfg.epochs` epochs of shuffled mini-batches.
pub fn fit<T: Scalar>(
    model: &mut CascadeModel<T>,
    images: &Tensor<T>,
    s1_labels: &[usize],
    s2_labels: &[usize],
    cfg: &FitConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let n = images.batch();
    if s2_labels.len() != n || (model.has_s1() && s1_labels.len() != n) {
        return Err(shape_err(format!(
            "{n} images but {} S1 and {} S2 labels",
            s1_labels.len(),
            s2_labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let sgd = SgdConfig {
            lr: cfg.lr_at(epoch),
            ..cfg.sgd
        };
        let mut sum = LossReport::default();
        for chunk in order.chunks(cfg.batch_size) {
            let x = images.select_rows(chunk)?;
            let y1: Vec<usize> = if model.has_s1() {
                chunk.iter().map(|&i| s1_labels[i]).collect()
            } else {
                Vec::new()
            };
            let y2: Vec<usize> = chunk.iter().map(|&i| s2_labels[i]).collect();
            let l = model.train_step(&x, &y1, &y2, &cfg.loss, &sgd)?;
            let w = chunk.len() as f64;
            sum.total += l.total * w;
            sum.s1 += l.s1 * w;
            sum.s2 += l.s2 * w;
        }
        let inv = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let log = EpochLog {
            epoch: epoch + 1,
            lr: sgd.lr,
            loss: LossReport {
                total: sum.total * inv,
                s1: sum.s1 * inv,
                s2: sum.s2 * inv,
            },
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// CSV with columns `epoch,lr,loss_total,loss_s1,loss_s2`.
pub fn write_loss_csv<W: Write>(logs: &[EpochLog], mut out: W) -> Result<()> {
    writeln!(out, "epoch,lr,loss_total,loss_s1,loss_s2")?;
    for l in logs {
        writeln!(
            out,
            "{},{},{:.8},{:.8},{:.8}",
            l.epoch, l.lr, l.loss.total, l.loss.s1, l.loss.s2
        )?;
    }
    Ok(())
}
