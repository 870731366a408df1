use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use onion_core::arch::{ArchSpec, Variant};
use onion_core::bench::{
    derive_s1_groups, emit_csv, emit_mac_csv, make_dataset, sweep_p, BenchMeta, SweepConfig, SyntheticDataset,
    VariantModels,
};
use onion_core::calibration::{ClassPartition, ThresholdSet};
use onion_core::cascade::{fit, write_loss_csv, FitConfig, InferOptions, Prediction};
use onion_core::cost::{curves, mac_count, write_curve_csv};
use onion_core::{CascadeModel32, Tensor, Tensor32};
use serde::Serialize;

use crate::config::{sidecar, RunConfig, Split};
use crate::Failure;

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(vec![msg.into()])
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), Failure> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn run(cfg: &RunConfig) -> Result<(), Failure> {
    match cfg.subcommand.as_str() {
        "train" => train(cfg),
        "calibrate" => calibrate(cfg),
        "infer" => infer(cfg),
        "complexity" => complexity(cfg),
        "bench" => bench(cfg),
        other => Err(config_err(format!("unknown subcommand `{other}`"))),
    }
}

/// Both heads of `spec` must end at 1×1 on the configured input.
fn check_heads(spec: &ArchSpec, cfg: &RunConfig) -> Result<(), Failure> {
    let rep = mac_count(spec, cfg.input_shape()).map_err(|e| config_err(e.to_string()))?;
    let last = rep.ops.last().expect("at least one conv");
    let s1_head = spec.s1_levels().map(|r| &rep.ops[*r.end() - 1]);
    if last.out_hw != (1, 1) || s1_head.is_some_and(|op| op.s1_out_hw != (1, 1)) {
        return Err(config_err(format!(
            "the final convolutions must reduce a {}x{} input to 1x1",
            cfg.input.1, cfg.input.2
        )));
    }
    Ok(())
}

fn dataset(cfg: &RunConfig, split: Split) -> Result<SyntheticDataset<f32>, Failure> {
    Ok(make_dataset(&cfg.dataset_config(split), cfg.split_seed(split))?)
}

/// Row-wise concatenation of chunk outputs.
fn concat_rows(parts: Vec<Tensor32>) -> Result<Tensor32, Failure> {
    let mut shape = parts.first().map(|p| p.shape().to_vec()).unwrap_or_else(|| vec![0, 0]);
    shape[0] = parts.iter().map(Tensor::batch).sum();
    let data = parts.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Tensor::new(shape, data)?)
}

fn s1_probabilities(model: &CascadeModel32, images: &Tensor32, chunk: usize) -> Result<Tensor32, Failure> {
    let mut parts = Vec::new();
    let mut start = 0;
    while start < images.batch() {
        let end = (start + chunk).min(images.batch());
        parts.push(model.forward_s1(&images.slice_rows(start..end)?)?.probabilities());
        start = end;
    }
    concat_rows(parts)
}

fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let spec = cfg.spec().with_variant(cfg.variant)?;
    check_heads(&spec, cfg)?;
    let classes = cfg.dataset.classes();
    if spec.variant != Variant::Monolithic && !(2..=classes).contains(&spec.s1_class_count) {
        return Err(config_err(format!(
            "S1 has {} outputs; it needs between 2 and {classes} (background plus grouped pattern classes)",
            spec.s1_class_count
        )));
    }
    let mut data = dataset(cfg, Split::Train)?;
    let mut groups = None;
    if spec.variant != Variant::Monolithic {
        let part = if spec.s1_class_count == classes {
            ClassPartition::identity(classes)
        } else {
            eprintln!("grouping {classes} classes into {} S1 classes", spec.s1_class_count);
            let pre = FitConfig {
                epochs: cfg.pretrain_epochs,
                ..cfg.fit_config()
            };
            derive_s1_groups(&spec, &data.images, &data.s2_labels, &pre, cfg.seed)?
        };
        data.regroup(&part.assignment)?;
        groups = Some(part.assignment);
    }

    let mut model = CascadeModel32::build(&spec, cfg.input.0, cfg.seed)?;
    eprintln!(
        "training {} ({}) on {} examples for {} epochs",
        spec,
        spec.variant.name(),
        data.len(),
        cfg.epochs
    );
    let logs = fit(&mut model, &data.images, &data.s1_labels, &data.s2_labels, &cfg.fit_config(), |l| {
        eprintln!(
            "epoch {:>3}  lr {:.5}  loss {:.5}  (S1 {:.5}, S2 {:.5})",
            l.epoch, l.lr, l.loss.total, l.loss.s1, l.loss.s2
        )
    })?;
    model.save(&cfg.out)?;
    write_loss_csv(&logs, create(&cfg.sidecar(".loss.csv"))?)?;
    let record = RunConfig {
        s1_groups: groups,
        ..cfg.clone()
    };
    write_json(&cfg.sidecar(".config.json"), &record)?;
    println!("checkpoint written to {}", cfg.out.display());
    Ok(())
}

/// The S1 grouping recorded by `train` next to the checkpoint, or the
/// identity when the counts already agree.
fn s1_groups(cfg: &RunConfig, model: &CascadeModel32) -> Result<Vec<usize>, Failure> {
    let ckpt = cfg.checkpoint.as_ref().expect("validated");
    let path = sidecar(ckpt, ".config.json");
    if path.is_file() {
        let rec: RunConfig = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if let Some(g) = rec.s1_groups {
            return Ok(g);
        }
    }
    let classes = cfg.dataset.classes();
    if model.s1_class_count() == classes {
        Ok((0..classes).collect())
    } else {
        Err(config_err(format!(
            "S1 has {} classes for {classes} dataset classes and {} records no grouping",
            model.s1_class_count(),
            path.display()
        )))
    }
}

fn load_model(cfg: &RunConfig) -> Result<CascadeModel32, Failure> {
    let path = cfg.checkpoint.as_ref().expect("validated");
    let model = CascadeModel32::load(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let c = model.input_channels();
    if (c, cfg.dataset.size, cfg.dataset.size) != cfg.input || c != 1 {
        return Err(config_err(format!(
            "checkpoint expects {c} input channels; the synthetic data is 1x{0}x{0}",
            cfg.dataset.size
        )));
    }
    Ok(model)
}

#[derive(Serialize)]
struct SplitRates {
    split: Split,
    class: usize,
    tpr: f64,
    fpr: f64,
}

fn rates(probs: &Tensor32, labels: &[usize], thr: &ThresholdSet<f32>, split: Split) -> Vec<SplitRates> {
    thr.entries()
        .map(|(class, e)| {
            let (mut tp, mut p, mut fp, mut n) = (0usize, 0usize, 0usize, 0usize);
            for (i, &y) in labels.iter().enumerate() {
                let pass = probs.row(i)[class] >= e.threshold;
                if y == class {
                    p += 1;
                    tp += usize::from(pass);
                } else {
                    n += 1;
                    fp += usize::from(pass);
                }
            }
            SplitRates {
                split,
                class,
                tpr: tp as f64 / p.max(1) as f64,
                fpr: fp as f64 / n.max(1) as f64,
            }
        })
        .collect()
}

fn calibrate(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    if !model.has_s1() {
        return Err(config_err("a monolithic checkpoint has no S1 to calibrate"));
    }
    let k = model.s1_class_count();
    let targets: Vec<(usize, f64)> = if cfg.target_tpr.is_empty() {
        (1..k).map(|c| (c, cfg.default_tpr)).collect()
    } else {
        cfg.target_tpr.clone()
    };
    if let Some(&(c, _)) = targets.iter().find(|t| t.0 >= k) {
        return Err(config_err(format!("target class {c} does not exist; S1 has {k} classes")));
    }
    let groups = s1_groups(cfg, &model)?;
    let mut data = dataset(cfg, cfg.calibration_split)?;
    data.regroup(&groups)?;
    let probs = s1_probabilities(&model, &data.images, cfg.batch_size)?;
    let thr = ThresholdSet::calibrate(&probs, &data.s1_labels, &targets)?;
    thr.save(&cfg.out)?;

    let other = match cfg.calibration_split {
        Split::Train => Split::Test,
        Split::Test => Split::Train,
    };
    let mut held = dataset(cfg, other)?;
    held.regroup(&groups)?;
    let held_probs = s1_probabilities(&model, &held.images, cfg.batch_size)?;
    let mut report = rates(&probs, &data.s1_labels, &thr, cfg.calibration_split);
    report.extend(rates(&held_probs, &held.s1_labels, &thr, other));
    print!("{}", thr.to_table());
    for r in &report {
        println!("{:?} split, class {}: TPR {:.4}, FPR {:.4}", r.split, r.class, r.tpr, r.fpr);
    }
    write_json(&cfg.sidecar(".rates.json"), &report)?;
    write_json(&cfg.sidecar(".config.json"), cfg)?;
    println!("thresholds written to {}", cfg.out.display());
    Ok(())
}

#[derive(Serialize, Default)]
struct InferSummary {
    examples: usize,
    passed: usize,
    p_bar: f64,
    accuracy: f64,
    s1_tpr: f64,
    s1_seconds: f64,
    compaction_seconds: f64,
    s2_seconds: f64,
    macs: u64,
    monolithic_macs: u64,
    mac_ratio: f64,
    compaction: bool,
}

fn infer(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    let thr = match (&cfg.thresholds, model.has_s1()) {
        (Some(p), _) => ThresholdSet::<f32>::load(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
        (None, false) => ThresholdSet::new(),
        (None, true) => return Err(config_err("--thresholds is required for a cascade checkpoint")),
    };
    let data = dataset(cfg, cfg.infer_split)?;
    let opts = InferOptions {
        compaction: cfg.compaction,
    };
    let mut out = create(&cfg.out)?;
    writeln!(out, "index,label,prediction,passed")?;
    let mut s = InferSummary {
        compaction: cfg.compaction,
        ..InferSummary::default()
    };
    let (mut correct, mut pos, mut pos_passed) = (0usize, 0usize, 0usize);
    let mut start = 0;
    while start < data.len() {
        let end = (start + cfg.batch_size).min(data.len());
        let x = data.images.slice_rows(start..end)?;
        let r = model.infer_cascade(&x, &thr, opts)?;
        for (j, pred) in r.predictions.iter().enumerate() {
            let label = data.s2_labels[start + j];
            let passed = r.mask.get(j);
            writeln!(out, "{},{label},{pred},{}", start + j, u8::from(passed))?;
            let class = match pred {
                Prediction::Rejected => 0,
                Prediction::Class(c) => *c,
            };
            correct += usize::from(class == label);
            if label > 0 {
                pos += 1;
                pos_passed += usize::from(passed);
            }
        }
        s.passed += r.stats.passed;
        s.s1_seconds += r.stats.s1_seconds;
        s.compaction_seconds += r.stats.compaction_seconds;
        s.s2_seconds += r.stats.s2_seconds;
        s.macs += r.stats.macs;
        start = end;
    }
    out.flush()?;
    let mono = mac_count(&model.spec().derive_variants().map_or_else(|_| model.spec().clone(), |v| v.monolithic), cfg.input_shape())?;
    s.examples = data.len();
    s.p_bar = s.passed as f64 / s.examples as f64;
    s.accuracy = correct as f64 / s.examples as f64;
    s.s1_tpr = pos_passed as f64 / pos.max(1) as f64;
    s.monolithic_macs = mono.cost_m * s.examples as u64;
    s.mac_ratio = s.macs as f64 / s.monolithic_macs as f64;
    println!(
        "{} examples: p̄ = {:.4}, accuracy = {:.4}, S1 TPR = {:.4}",
        s.examples, s.p_bar, s.accuracy, s.s1_tpr
    );
    println!(
        "time: S1 {:.3}s, compaction {:.3}s, S2 {:.3}s; MACs {} ({:.3} of monolithic)",
        s.s1_seconds, s.compaction_seconds, s.s2_seconds, s.macs, s.mac_ratio
    );
    write_json(&cfg.sidecar(".stats.json"), &s)?;
    write_json(&cfg.sidecar(".config.json"), cfg)?;
    Ok(())
}

fn complexity(cfg: &RunConfig) -> Result<(), Failure> {
    let mut spec = cfg.spec();
    if cfg.variant == Variant::Monolithic && spec.variant != Variant::Monolithic {
        spec = spec.derive_variants()?.monolithic;
    }
    let report = mac_count(&spec, cfg.input_shape()).map_err(|e| config_err(e.to_string()))?;
    let curve = curves(&report, &cfg.p_grid)?;
    print!("{}", report.summary());
    if report.depth_s1 > 0 {
        println!(
            "crossover p* = {:.6} (1 - cost_S1/cost_M = {:.6})",
            curve.p_star,
            1.0 - report.cost_s1 as f64 / report.cost_m as f64
        );
    } else {
        println!("monolithic: t = t_M = t_NS for every p");
    }
    write_curve_csv(&curve, create(&cfg.out)?)?;
    write_json(&cfg.sidecar(".report.json"), &report)?;
    write_json(&cfg.sidecar(".config.json"), cfg)?;
    Ok(())
}

fn bench(cfg: &RunConfig) -> Result<(), Failure> {
    let spec = cfg.spec();
    if spec.variant == Variant::Monolithic {
        return Err(config_err("bench compares variants and needs a split architecture"));
    }
    let spec = spec.with_variant(Variant::Sharing)?;
    check_heads(&spec, cfg)?;
    let mut models = VariantModels::<f32>::build(&spec, cfg.input.0, cfg.seed)?;
    if let Some(path) = &cfg.checkpoint {
        let m = CascadeModel32::load(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if m.spec() != &spec {
            return Err(config_err(format!("{} holds {}, not {spec}", path.display(), m.spec())));
        }
        models.sharing = m;
    }
    let batch = make_dataset::<f32>(
        &onion_core::bench::DatasetConfig {
            examples: cfg.batch_size,
            ..cfg.dataset
        },
        cfg.split_seed(Split::Test),
    )?
    .images;
    let sweep = SweepConfig {
        p_grid: cfg.p_grid.clone(),
        reps: cfg.reps,
        warmup: cfg.warmup,
        seed: cfg.seed,
        compaction: cfg.compaction,
    };
    eprintln!(
        "sweeping {} p values, batch {}, {} reps after {} warm-up runs",
        sweep.p_grid.len(),
        cfg.batch_size,
        sweep.reps,
        sweep.warmup
    );
    let run = sweep_p(&models, &batch, &sweep)?;

    let rep = mac_count(&spec, cfg.input_shape())?;
    let n = cfg.batch_size as u64;
    let counters_match = run.points.iter().all(|pt| {
        let k = pt.passed as u64;
        pt.macs_sharing == n * rep.cost_s1 + k * rep.cost_s2_shared
            && pt.macs_non_sharing == n * rep.cost_s1 + k * rep.cost_s2_ns
            && pt.macs_monolithic == n * rep.cost_m
    });
    println!("p         t (ms)      ± se      t_M (ms)    t_NS (ms)   MACs / MACs_M");
    for pt in &run.points {
        println!(
            "{:<9.4} {:<11.4} {:<9.4} {:<11.4} {:<11.4} {:.4}",
            pt.p,
            pt.sharing.mean * 1e3,
            pt.sharing.se * 1e3,
            pt.monolithic.mean * 1e3,
            pt.non_sharing.mean * 1e3,
            pt.macs_sharing as f64 / pt.macs_monolithic as f64
        );
    }
    println!("instrumented MACs equal the cost model at every p: {counters_match}");
    emit_csv(&run, create(&cfg.out)?)?;
    emit_mac_csv(&run, create(&cfg.sidecar(".macs.csv"))?)?;
    write_json(&cfg.sidecar(".json"), &BenchMeta::describe(&run))?;
    write_json(&cfg.sidecar(".config.json"), cfg)?;
    if !counters_match {
        return Err(Failure::Runtime("instrumented MAC counts disagree with the cost model".into()));
    }
    Ok(())
}
