use std::time::Instant;

use onion_core::arch::parse_arch;
use onion_core::bench::{make_dataset, DatasetConfig, VariantModels};
use onion_core::calibration::ThresholdSet;
use onion_core::cascade::{fit, CascadeModel, FitConfig, InferOptions, JointLossConfig};
use onion_core::nn::SgdConfig;
use onion_core::sparse::PassMask;

pub const DESK_ARCH: &str = "C3(4/12)p1, R, P2, C3(4/12)p1, R, P2, C4(2/2)";
pub const DESK_EPOCHS: usize = 8;

#[derive(Debug, Clone)]
pub struct DeskResult {
    pub held_out_tpr: f64,
    pub p_bar: f64,
    pub macs_cascade: u64,
    pub macs_monolithic: u64,
    pub threshold: f32,
    pub final_loss: f64,
    pub seconds: f64,
}

pub fn run_desk(train_n: usize, test_n: usize, epochs: usize) -> DeskResult {
    let t0 = Instant::now();
    let spec = parse_arch(DESK_ARCH).unwrap();
    let data = |n, seed| {
        let cfg = DatasetConfig {
            examples: n,
            ..DatasetConfig::default()
        };
        make_dataset::<f32>(&cfg, seed).unwrap()
    };
    let (train, test) = (data(train_n, 11), data(test_n, 12));

    let mut model = CascadeModel::<f32>::build(&spec, 1, 7).unwrap();
    let cfg = FitConfig {
        epochs,
        batch_size: 50,
        loss: JointLossConfig {
            alpha: 0.5,
            ..JointLossConfig::default()
        },
        sgd: SgdConfig {
            lr: 0.02,
            ..SgdConfig::default()
        },
        lr_step: epochs.div_ceil(2).max(1),
        lr_decay: 0.3,
        seed: 7,
    };
    let logs = fit(&mut model, &train.images, &train.s1_labels, &train.s2_labels, &cfg, |l| {
        eprintln!("epoch {} loss {:.4} (s1 {:.4}, s2 {:.4})", l.epoch, l.loss.total, l.loss.s1, l.loss.s2)
    })
    .unwrap();

    let probs = model.forward_s1(&train.images).unwrap().probabilities();
    let thresholds = ThresholdSet::calibrate(&probs, &train.s1_labels, &[(1, 0.95)]).unwrap();

    let mono = VariantModels::<f32>::build(&spec, 1, 0).unwrap().monolithic;
    let opts = InferOptions::default();
    let (mut passed, mut pos, mut pos_passed, mut macs_c, mut macs_m) = (0usize, 0usize, 0usize, 0u64, 0u64);
    let chunk = 500;
    let mut start = 0;
    while start < test.len() {
        let end = (start + chunk).min(test.len());
        let x = test.images.slice_rows(start..end).unwrap();
        let out = model.infer_cascade(&x, &thresholds, opts).unwrap();
        passed += out.mask.count();
        macs_c += out.stats.macs;
        for j in 0..end - start {
            if test.s1_labels[start + j] == 1 {
                pos += 1;
                pos_passed += usize::from(out.mask.get(j));
            }
        }
        let (_, s) = mono.run_with_mask(&x, &PassMask::all(end - start, true), opts).unwrap();
        macs_m += s.macs;
        start = end;
    }
    DeskResult {
        held_out_tpr: pos_passed as f64 / pos as f64,
        p_bar: passed as f64 / test.len() as f64,
        macs_cascade: macs_c,
        macs_monolithic: macs_m,
        threshold: thresholds.get(1).unwrap().threshold,
        final_loss: logs.last().map_or(f64::NAN, |l| l.loss.total),
        seconds: t0.elapsed().as_secs_f64(),
    }
}
