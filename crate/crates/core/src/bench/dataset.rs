use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Difficulty tier of a synthetic example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    /// Pure noise.
    EasyNegative,
    /// Noise plus a low-contrast distractor blob.
    HardNegative,
    /// Noise plus a class-specific oriented bar.
    Positive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub examples: usize,
    /// Side length of the square single-channel images.
    pub size: usize,
    pub easy_negative_fraction: f64,
    pub hard_negative_fraction: f64,
    /// Number of positive classes (bar orientations); S2 class 0 is the
    /// background.
    pub pattern_classes: usize,
    pub noise_std: f64,
    pub contrast: f64,
    pub distractor_contrast: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            examples: 1000,
            size: 16,
            easy_negative_fraction: 0.7,
            hard_negative_fraction: 0.15,
            pattern_classes: 1,
            noise_std: 0.5,
            contrast: 1.0,
            distractor_contrast: 0.8,
        }
    }
}

impl DatasetConfig {
    pub fn positive_fraction(&self) -> f64 {
        1.0 - self.easy_negative_fraction - self.hard_negative_fraction
    }

    pub fn validate(&self) -> Result<()> {
        let (e, h) = (self.easy_negative_fraction, self.hard_negative_fraction);
        if !(0.0..=1.0).contains(&e) || !(0.0..=1.0).contains(&h) || e + h > 1.0 + 1e-12 {
            return Err(invalid(format!(
                "tier fractions must lie in [0, 1] and sum to at most 1 (easy {e}, hard {h})"
            )));
        }
        if self.size < 8 {
            return Err(invalid(format!("image size {} is below the minimum of 8", self.size)));
        }
        if self.pattern_classes == 0 {
            return Err(invalid("at least one pattern class is required"));
        }
        if !(self.noise_std >= 0.0 && self.contrast > 0.0 && self.distractor_contrast >= 0.0) {
            return Err(invalid("noise and contrast must be non-negative (contrast positive)"));
        }
        Ok(())
    }

    /// Number of S2 classes (background plus patterns).
    pub fn classes(&self) -> usize {
        self.pattern_classes + 1
    }

    /// Examples per tier, rounding the easy and hard tiers to the nearest
    /// integer and giving the remainder to the positives.
    pub fn tier_counts(&self) -> (usize, usize, usize) {
        let n = self.examples;
        let easy = ((n as f64) * self.easy_negative_fraction).round() as usize;
        let hard = (((n as f64) * self.hard_negative_fraction).round() as usize).min(n - easy.min(n));
        let easy = easy.min(n);
        (easy, hard, n - easy - hard)
    }
}

/// Images with planted patterns, aligned labels and tiers.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset<T> {
    pub images: Tensor<T>,
    pub s1_labels: Vec<usize>,
    pub s2_labels: Vec<usize>,
    pub tiers: Vec<Tier>,
    pub config: DatasetConfig,
}

impl<T: Scalar> SyntheticDataset<T> {
    pub fn len(&self) -> usize {
        self.s2_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s2_labels.is_empty()
    }

    /// Replaces the S1 labels by the group of each S2 label.
    pub fn regroup(&mut self, group_of: &[usize]) -> Result<()> {
        if let Some(&y) = self.s2_labels.iter().find(|&&y| y >= group_of.len()) {
            return Err(invalid(format!("S2 label {y} has no group")));
        }
        self.s1_labels = self.s2_labels.iter().map(|&y| group_of[y]).collect();
        Ok(())
    }
}

fn draw_bar(img: &mut [f64], size: usize, class: usize, classes: usize, amp: f64, rng: &mut ChaCha8Rng) {
    let theta = std::f64::consts::PI * (class - 1) as f64 / classes as f64;
    let (dx, dy) = (theta.cos(), theta.sin());
    let half = size as f64 / 2.0;
    let jitter = (size / 5) as f64;
    let cx = half - 0.5 + rng.random_range(-jitter..=jitter);
    let cy = half - 0.5 + rng.random_range(-jitter..=jitter);
    let len = size as f64 * 0.3;
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let along = px * dx + py * dy;
            let across = -px * dy + py * dx;
            if along.abs() <= len && across.abs() <= 0.8 {
                img[y * size + x] += amp;
            }
        }
    }
}

fn draw_blob(img: &mut [f64], size: usize, amp: f64, rng: &mut ChaCha8Rng) {
    let margin = 3.0;
    let cx = rng.random_range(margin..size as f64 - margin);
    let cy = rng.random_range(margin..size as f64 - margin);
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            img[y * size + x] += amp * (-d2 / 3.0).exp();
        }
    }
}

/// Deterministic synthetic dataset: easy negatives are pure Gaussian noise,
/// hard negatives add a low-contrast blob, positives of class `c` add a bar
/// at angle `π (c − 1) / pattern_classes` with random jitter and amplitude.
/// S2 labels are `0` for negatives and the pattern class for positives; S1
/// labels start equal to S2 labels (see [`SyntheticDataset::regroup`]).
pub fn make_dataset<T: Scalar>(config: &DatasetConfig, seed: u64) -> Result<SyntheticDataset<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (easy, hard, pos) = config.tier_counts();
    let mut plan: Vec<(Tier, usize)> = Vec::with_capacity(config.examples);
    plan.extend(std::iter::repeat_n((Tier::EasyNegative, 0), easy));
    plan.extend(std::iter::repeat_n((Tier::HardNegative, 0), hard));
    plan.extend((0..pos).map(|i| (Tier::Positive, 1 + i % config.pattern_classes)));
    plan.shuffle(&mut rng);

    let size = config.size;
    let noise = Normal::new(0.0, config.noise_std.max(1e-12)).expect("finite std");
    let mut data = Vec::with_capacity(config.examples * size * size);
    let mut img = vec![0.0f64; size * size];
    for &(tier, class) in &plan {
        for v in img.iter_mut() {
            *v = if config.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        }
        match tier {
            Tier::EasyNegative => {}
            Tier::HardNegative => {
                let amp = config.distractor_contrast * rng.random_range(0.6..1.2);
                draw_blob(&mut img, size, amp, &mut rng);
            }
            Tier::Positive => {
                let amp = config.contrast * rng.random_range(0.6..1.4);
                draw_bar(&mut img, size, class, config.pattern_classes, amp, &mut rng);
            }
        }
        data.extend(img.iter().map(|&v| T::from_f64_lossy(v)));
    }
    let labels: Vec<usize> = plan.iter().map(|&(_, c)| c).collect();
    Ok(SyntheticDataset {
        images: Tensor::new(vec![config.examples, 1, size, size], data)?,
        s1_labels: labels.clone(),
        s2_labels: labels,
        tiers: plan.iter().map(|&(t, _)| t).collect(),
        config: *config,
    })
}
