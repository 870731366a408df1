use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Variant};
use crate::cascade::{CascadeModel, InferOptions};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::sparse::PassMask;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub p_grid: Vec<f64>,
    pub reps: usize,
    pub warmup: usize,
    /// Seeds the forced pass masks.
    pub seed: u64,
    pub compaction: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            p_grid: crate::cost::uniform_grid(10),
            reps: 5,
            warmup: 5,
            seed: 0,
            compaction: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(invalid(format!("at least 2 repetitions are needed for a standard error, got {}", self.reps)));
        }
        if self.p_grid.is_empty() {
            return Err(invalid("empty p grid"));
        }
        if let Some(p) = self.p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("p = {p} lies outside [0, 1]")));
        }
        Ok(())
    }
}

/// Mean and standard error of repeated timings, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean: f64,
    pub se: f64,
}

impl Timing {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Self { mean, se: 0.0 };
        }
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub p: f64,
    pub passed: usize,
    pub sharing: Timing,
    pub monolithic: Timing,
    pub non_sharing: Timing,
    pub macs_sharing: u64,
    pub macs_monolithic: u64,
    pub macs_non_sharing: u64,
    pub s2_conv_calls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub spec: String,
    pub batch_size: usize,
    pub config: SweepConfig,
    pub points: Vec<BenchPoint>,
}

/// The three networks compared by a sweep, built from one split spec.
#[derive(Clone, Debug)]
pub struct VariantModels<T> {
    pub sharing: CascadeModel<T>,
    pub monolithic: CascadeModel<T>,
    pub non_sharing: CascadeModel<T>,
}

impl<T: Scalar> VariantModels<T> {
    pub fn build(spec: &ArchSpec, input_channels: usize, seed: u64) -> Result<Self> {
        let v = spec.derive_variants()?;
        Ok(Self {
            sharing: CascadeModel::build(&v.sharing, input_channels, seed)?,
            monolithic: CascadeModel::build(&v.monolithic, input_channels, seed)?,
            non_sharing: CascadeModel::build(&v.non_sharing, input_channels, seed)?,
        })
    }

    pub fn get(&self, variant: Variant) -> &CascadeModel<T> {
        match variant {
            Variant::Sharing => &self.sharing,
            Variant::Monolithic => &self.monolithic,
            Variant::NonSharing => &self.non_sharing,
        }
    }
}

/// Mask with exactly `⌈p·n⌉` passes at seeded random positions.
pub fn forced_mask(n: usize, p: f64, seed: u64) -> PassMask {
    // The small slack keeps e.g. 0.1 · 120 from rounding up to 13.
    let k = ((p * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flags = vec![false; n];
    for i in sample(&mut rng, n, k) {
        flags[i] = true;
    }
    PassMask::new(flags)
}

fn time_run<T: Scalar>(
    model: &CascadeModel<T>,
    batch: &Tensor<T>,
    mask: &PassMask,
    opts: InferOptions,
) -> Result<(Duration, u64, u64)> {
    let t = Instant::now();
    let (_, stats) = model.run_with_mask(batch, mask, opts)?;
    Ok((t.elapsed(), stats.macs, stats.s2_conv_calls))
}

/// Times the three variants on `batch` with forced pass fractions. Every
/// grid point gets `warmup` untimed runs of each network, then `reps`
/// interleaved timed runs.
pub fn sweep_p<T: Scalar>(models: &VariantModels<T>, batch: &Tensor<T>, cfg: &SweepConfig) -> Result<BenchRun> {
    cfg.validate()?;
    let n = batch.batch();
    let opts = InferOptions {
        compaction: cfg.compaction,
    };
    let all = PassMask::all(n, true);
    let mut points = Vec::with_capacity(cfg.p_grid.len());
    for (i, &p) in cfg.p_grid.iter().enumerate() {
        let mask = forced_mask(n, p, cfg.seed.wrapping_add(i as u64));
        for _ in 0..cfg.warmup {
            time_run(&models.sharing, batch, &mask, opts)?;
            time_run(&models.non_sharing, batch, &mask, opts)?;
            time_run(&models.monolithic, batch, &all, opts)?;
        }
        let (mut ts, mut tm, mut tns) = (Vec::new(), Vec::new(), Vec::new());
        let (mut macs, mut calls) = ((0, 0, 0), 0);
        for _ in 0..cfg.reps {
            let (d, m, c) = time_run(&models.sharing, batch, &mask, opts)?;
            ts.push(d.as_secs_f64());
            let (d, m_ns, _) = time_run(&models.non_sharing, batch, &mask, opts)?;
            tns.push(d.as_secs_f64());
            let (d, m_m, _) = time_run(&models.monolithic, batch, &all, opts)?;
            tm.push(d.as_secs_f64());
            macs = (m, m_m, m_ns);
            calls = c;
        }
        points.push(BenchPoint {
            p,
            passed: mask.count(),
            sharing: Timing::from_samples(&ts),
            monolithic: Timing::from_samples(&tm),
            non_sharing: Timing::from_samples(&tns),
            macs_sharing: macs.0,
            macs_monolithic: macs.1,
            macs_non_sharing: macs.2,
            s2_conv_calls: calls,
        });
    }
    Ok(BenchRun {
        spec: models.sharing.spec().canonical(),
        batch_size: n,
        config: cfg.clone(),
        points,
    })
}

/// Timing table in milliseconds:
/// `p,t_mean,t_se,tM_mean,tM_se,tNS_mean,tNS_se`.
pub fn emit_csv<W: Write>(run: &BenchRun, mut out: W) -> Result<()> {
    writeln!(out, "p,t_mean,t_se,tM_mean,tM_se,tNS_mean,tNS_se")?;
    let ms = 1e3;
    for pt in &run.points {
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            pt.p,
            pt.sharing.mean * ms,
            pt.sharing.se * ms,
            pt.monolithic.mean * ms,
            pt.monolithic.se * ms,
            pt.non_sharing.mean * ms,
            pt.non_sharing.se * ms
        )?;
    }
    Ok(())
}

/// Executed MAC counts per grid point (deterministic, unlike timings):
/// `p,passed,macs,macs_M,macs_NS`.
pub fn emit_mac_csv<W: Write>(run: &BenchRun, mut out: W) -> Result<()> {
    writeln!(out, "p,passed,macs,macs_M,macs_NS")?;
    for pt in &run.points {
        writeln!(
            out,
            "{:.6},{},{},{},{}",
            pt.p, pt.passed, pt.macs_sharing, pt.macs_monolithic, pt.macs_non_sharing
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    pub spec: String,
    pub seed: u64,
    pub batch_size: usize,
    pub reps: usize,
    pub warmup: usize,
    pub compaction: bool,
    pub host: String,
    pub time_unit: String,
    pub timer_resolution_ns: f64,
}

impl BenchMeta {
    pub fn describe(run: &BenchRun) -> Self {
        Self {
            spec: run.spec.clone(),
            seed: run.config.seed,
            batch_size: run.batch_size,
            reps: run.config.reps,
            warmup: run.config.warmup,
            compaction: run.config.compaction,
            host: host_description(),
            time_unit: "ms".into(),
            timer_resolution_ns: timer_resolution_ns(),
        }
    }
}

pub fn host_description() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{} {} ({threads} hardware threads, single-threaded kernels)",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Smallest non-zero step observed between consecutive `Instant` reads.
pub fn timer_resolution_ns() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min((b - a).as_nanos() as f64);
    }
    best
}
