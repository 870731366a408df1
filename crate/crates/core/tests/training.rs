//! Small end-to-end runs: training, calibration and the cascade's pass rate.

mod common;

use std::sync::OnceLock;

use common::desk::DESK_ARCH;
use onion_core::arch::parse_arch;
use onion_core::bench::{make_dataset, DatasetConfig, SyntheticDataset};
use onion_core::calibration::{pick_threshold, roc_curve, ThresholdSet};
use onion_core::cascade::{fit, CascadeModel, FitConfig, InferOptions};
use onion_core::nn::SgdConfig;
use serde_json::Value;

fn data(examples: usize, easy: f64, hard: f64, seed: u64) -> SyntheticDataset<f32> {
    let cfg = DatasetConfig {
        examples,
        easy_negative_fraction: easy,
        hard_negative_fraction: hard,
        ..DatasetConfig::default()
    };
    make_dataset(&cfg, seed).unwrap()
}

fn fit_config(epochs: usize, seed: u64) -> FitConfig {
    FitConfig {
        epochs,
        batch_size: 50,
        sgd: SgdConfig {
            lr: 0.02,
            ..SgdConfig::default()
        },
        seed,
        ..FitConfig::default()
    }
}

fn s1_positive_scores(model: &CascadeModel<f32>, d: &SyntheticDataset<f32>) -> (Vec<f32>, Vec<bool>) {
    let probs = model.forward_s1(&d.images).unwrap().probabilities();
    let scores = (0..d.len()).map(|i| probs.row(i)[1]).collect();
    (scores, d.s1_labels.iter().map(|&y| y == 1).collect())
}

struct Trained {
    model: CascadeModel<f32>,
    train: SyntheticDataset<f32>,
    test: SyntheticDataset<f32>,
}

/// One desk cascade shared by the calibration tests.
fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let train = data(3000, 0.7, 0.15, 21);
        let test = data(2000, 0.7, 0.15, 22);
        let mut model = CascadeModel::build(&parse_arch(DESK_ARCH).unwrap(), 1, 5).unwrap();
        fit(&mut model, &train.images, &train.s1_labels, &train.s2_labels, &fit_config(4, 5), |_| {}).unwrap();
        Trained { model, train, test }
    })
}

fn calibrated(target: f64) -> ThresholdSet<f32> {
    let t = trained();
    let probs = t.model.forward_s1(&t.train.images).unwrap().probabilities();
    ThresholdSet::calibrate(&probs, &t.train.s1_labels, &[(1, target)]).unwrap()
}

#[test]
fn held_out_tpr_stays_near_target() {
    let t = trained();
    for target in [0.8, 0.9, 0.95] {
        let thr = calibrated(target);
        let out = t.model.infer_cascade(&t.test.images, &thr, InferOptions::default()).unwrap();
        let (mut pos, mut hit) = (0, 0);
        for (i, &y) in t.test.s1_labels.iter().enumerate() {
            if y == 1 {
                pos += 1;
                hit += usize::from(out.mask.get(i));
            }
        }
        let tpr = hit as f64 / pos as f64;
        assert!(tpr >= target - 0.05, "target {target}: held-out TPR {tpr}");
    }
}

/// The pass fraction on fresh data is what the calibrated rates predict:
/// `p̄ ≈ π·TPR + (1 − π)·FPR` with `π` the positive share.
#[test]
fn pass_fraction_matches_calibrated_rates() {
    let t = trained();
    for target in [0.9, 0.95] {
        let thr = calibrated(target);
        let e = thr.get(1).unwrap();
        let pi = t.train.s1_labels.iter().filter(|&&y| y == 1).count() as f64 / t.train.len() as f64;
        let expected = pi * e.achieved_tpr + (1.0 - pi) * e.achieved_fpr;
        let out = t.model.infer_cascade(&t.test.images, &thr, InferOptions::default()).unwrap();
        let p_bar = out.mask.fraction();
        assert!((p_bar - expected).abs() <= 0.03, "target {target}: p̄ {p_bar:.4}, expected {expected:.4}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let t = trained();
    let dir = std::env::temp_dir().join(format!("onion-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.onion");
    t.model.save(&path).unwrap();
    let back = CascadeModel::<f32>::load(&path).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(back.spec(), t.model.spec());
    assert_eq!(back.to_bytes().unwrap(), t.model.to_bytes().unwrap());
    let thr = calibrated(0.9);
    let x = t.test.images.slice_rows(0..200).unwrap();
    let a = t.model.infer_cascade(&x, &thr, InferOptions::default()).unwrap();
    let b = back.infer_cascade(&x, &thr, InferOptions::default()).unwrap();
    assert_eq!(a.predictions, b.predictions);
}

/// With only easy negatives S1 separates the classes quickly: the held-out
/// ROC reaches the golden TPR below the golden FPR within the epoch budget.
#[test]
fn easy_task_reaches_golden_operating_point() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/easy_task.json");
    let g: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let f = |k: &str| g[k].as_f64().unwrap();
    let u = |k: &str| g[k].as_u64().unwrap() as usize;

    let (easy, hard) = (f("easy_negative_fraction"), f("hard_negative_fraction"));
    let train = data(u("train_examples"), easy, hard, 41);
    let test = data(u("test_examples"), easy, hard, 42);
    let mut model = CascadeModel::build(&parse_arch(g["arch"].as_str().unwrap()).unwrap(), 1, 9).unwrap();
    let mut reached = None;
    for epoch in 0..u("max_epochs") {
        let mut cfg = fit_config(1, epoch as u64);
        cfg.sgd.lr = f("lr") * f("lr_decay").powi((epoch / u("lr_step")) as i32);
        fit(&mut model, &train.images, &train.s1_labels, &train.s2_labels, &cfg, |_| {}).unwrap();
        let (scores, labels) = s1_positive_scores(&model, &test);
        let pt = pick_threshold(&roc_curve(&scores, &labels).unwrap(), f("target_tpr")).unwrap();
        if pt.fpr < f("max_fpr") {
            reached = Some((epoch + 1, pt.fpr));
            break;
        }
    }
    let (epochs, fpr) = reached.expect("golden operating point not reached");
    let oracle = &g["oracle_run"];
    assert_eq!(epochs as u64, oracle["first_epoch_below_max_fpr"].as_u64().unwrap());
    assert!((fpr - oracle["fpr_at_target"].as_f64().unwrap()).abs() < 1e-9);
}
