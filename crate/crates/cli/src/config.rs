//! Run configuration: a flat `key = value` file, overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use onion_core::arch::{parse_arch, templates, ArchSpec, Variant};
use onion_core::bench::DatasetConfig;
use onion_core::cascade::{FitConfig, JointLossConfig, S2LossKind};
use onion_core::cost::InputShape;
use onion_core::nn::SgdConfig;
use serde::{Deserialize, Serialize};

use crate::Flags;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Everything a subcommand needs, fully resolved. Written next to the
/// outputs so a run can be repeated from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub arch_source: Option<String>,
    /// Canonical architecture text.
    pub arch: Option<String>,
    pub variant: Variant,
    pub input: (usize, usize, usize),
    pub dataset: DatasetConfig,
    pub train_examples: usize,
    pub test_examples: usize,
    pub data_seed: u64,
    pub alpha: f64,
    pub s2_loss: S2LossKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_step: usize,
    pub lr_decay: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    /// `(S1 class, target TPR)`; empty means every non-background class.
    pub target_tpr: Vec<(usize, f64)>,
    pub default_tpr: f64,
    pub calibration_split: Split,
    pub infer_split: Split,
    pub p_grid: Vec<f64>,
    pub reps: usize,
    pub warmup: usize,
    pub compaction: bool,
    pub checkpoint: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// S2 class to S1 group, filled in by `train`.
    pub s1_groups: Option<Vec<usize>>,
}

impl RunConfig {
    fn defaults(subcommand: &str) -> Self {
        let (batch, out) = match subcommand {
            "train" => (128, "model.onion"),
            "calibrate" => (256, "thresholds.txt"),
            "infer" => (256, "predictions.csv"),
            "complexity" => (0, "complexity.csv"),
            _ => (120, "bench.csv"),
        };
        Self {
            subcommand: subcommand.into(),
            arch_source: None,
            arch: None,
            variant: Variant::Sharing,
            input: (1, 16, 16),
            dataset: DatasetConfig::default(),
            train_examples: 10_000,
            test_examples: 2_000,
            data_seed: 1,
            alpha: 0.5,
            s2_loss: S2LossKind::CrossEntropy,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_step: 0,
            lr_decay: 0.1,
            epochs: 10,
            pretrain_epochs: 2,
            batch_size: batch,
            target_tpr: Vec::new(),
            default_tpr: 0.9,
            calibration_split: Split::Train,
            infer_split: Split::Test,
            p_grid: onion_core::cost::uniform_grid(if subcommand == "complexity" { 100 } else { 10 }),
            reps: 5,
            warmup: 5,
            compaction: true,
            checkpoint: None,
            thresholds: None,
            out: out.into(),
            seed: 0,
            s1_groups: None,
        }
    }

    pub fn spec(&self) -> ArchSpec {
        parse_arch(self.arch.as_deref().expect("validated")).expect("validated")
    }

    pub fn input_shape(&self) -> InputShape {
        InputShape::from(self.input)
    }

    pub fn dataset_config(&self, split: Split) -> DatasetConfig {
        DatasetConfig {
            examples: match split {
                Split::Train => self.train_examples,
                Split::Test => self.test_examples,
            },
            ..self.dataset
        }
    }

    /// Seed of a split; the two never coincide.
    pub fn split_seed(&self, split: Split) -> u64 {
        match split {
            Split::Train => self.data_seed.wrapping_mul(2),
            Split::Test => self.data_seed.wrapping_mul(2).wrapping_add(1),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            loss: JointLossConfig {
                alpha: self.alpha,
                s2_loss_kind: self.s2_loss,
            },
            sgd: SgdConfig {
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            lr_step: self.lr_step,
            lr_decay: self.lr_decay,
            seed: self.seed,
        }
    }

    /// `<out><suffix>`, e.g. `model.onion.loss.csv`.
    pub fn sidecar(&self, suffix: &str) -> PathBuf {
        sidecar(&self.out, suffix)
    }
}

pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, Vec<String>> {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                let k = k.trim().to_ascii_lowercase().replace('-', "_");
                if map.insert(k.clone(), v.trim().to_string()).is_some() {
                    errors.push(format!("line {}: duplicate key `{k}`", i + 1));
                }
            }
            _ => errors.push(format!("line {}: expected `key = value`, got `{line}`", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(map)
    } else {
        Err(errors)
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    // `a:b:n` is an inclusive linspace, anything else a comma list.
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| format!("bad grid start `{}`", parts[0]))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| format!("bad grid end `{}`", parts[1]))?;
        let n: usize = parts[2].trim().parse().map_err(|_| format!("bad grid count `{}`", parts[2]))?;
        if n < 2 {
            return Err("a grid range needs at least 2 points".into());
        }
        return Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect());
    }
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad p value `{}`", t.trim())))
        .collect()
}

/// Per-class targets plus an optional default for the remaining classes.
type Targets = (Vec<(usize, f64)>, Option<f64>);

fn parse_targets(s: &str) -> Result<Targets, String> {
    // Either one TPR for every class of interest, or `class:tpr` pairs.
    if !s.contains(':') {
        let v = s.trim().parse::<f64>().map_err(|_| format!("bad TPR `{s}`"))?;
        return Ok((Vec::new(), Some(v)));
    }
    let mut out = Vec::new();
    for pair in s.split(',').filter(|t| !t.trim().is_empty()) {
        let (c, t) = pair.split_once(':').ok_or_else(|| format!("expected `class:tpr`, got `{pair}`"))?;
        let c = c.trim().parse::<usize>().map_err(|_| format!("bad class `{c}`"))?;
        let t = t.trim().parse::<f64>().map_err(|_| format!("bad TPR `{t}`"))?;
        out.push((c, t));
    }
    Ok((out, None))
}

fn parse_input(s: &str) -> Result<(usize, usize, usize), String> {
    let dims: Vec<usize> = s
        .split(['x', '×'])
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("input must look like `3x224x224`, got `{s}`"))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(format!("input must have three positive extents, got `{s}`")),
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{s}`")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("split must be `train` or `test`, got `{s}`")),
    }
}

/// Loads the arch text from a file, or a built-in template by name.
fn load_arch(source: &str, base: Option<&Path>, cfg: &mut RunConfig, input_given: bool) -> Result<ArchSpec, String> {
    let path = match base {
        Some(dir) if Path::new(source).is_relative() => dir.join(source),
        _ => PathBuf::from(source),
    };
    if path.is_file() {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        return parse_arch(&text).map_err(|e| format!("{}: {e}", path.display()));
    }
    if let Some(t) = templates::find(source) {
        if !input_given {
            cfg.input = t.input;
        }
        return t.parse_full().map_err(|e| e.to_string());
    }
    Err(format!("arch `{source}` is neither a readable file nor a built-in template"))
}

/// Resolves defaults, the config file and the flags (in that order of
/// precedence, lowest first) and validates the result. Every problem is
/// reported, nothing runs unless the list is empty.
pub fn resolve(subcommand: &str, flags: &Flags) -> Result<RunConfig, Vec<String>> {
    let mut cfg = RunConfig::defaults(subcommand);
    let mut errors = Vec::new();
    let mut kv = BTreeMap::new();
    let mut base = None;
    if let Some(path) = &flags.config {
        match std::fs::read_to_string(path) {
            Ok(text) => match parse_kv(&text) {
                Ok(m) => kv = m,
                Err(e) => errors.extend(e.into_iter().map(|m| format!("{}: {m}", path.display()))),
            },
            Err(e) => errors.push(format!("cannot read config {}: {e}", path.display())),
        }
        base = path.parent().map(Path::to_path_buf);
    }

    let mut tpr_default = None;
    let mut input_given = false;
    let mut arch_source = None;
    for (key, value) in &kv {
        let v = value.as_str();
        macro_rules! num {
            ($field:expr) => {
                match v.parse() {
                    Ok(x) => $field = x,
                    Err(_) => errors.push(format!("{key}: cannot parse `{v}`")),
                }
            };
        }
        let mut set = |r: Result<(), String>| {
            if let Err(e) = r {
                errors.push(format!("{key}: {e}"));
            }
        };
        match key.as_str() {
            "arch" => arch_source = Some(v.to_string()),
            "variant" => set(v.parse().map(|x| cfg.variant = x).map_err(|e: onion_core::Error| e.to_string())),
            "input" => {
                input_given = true;
                set(parse_input(v).map(|x| cfg.input = x))
            }
            "train_examples" => num!(cfg.train_examples),
            "test_examples" => num!(cfg.test_examples),
            "image_size" => num!(cfg.dataset.size),
            "easy_negative_fraction" => num!(cfg.dataset.easy_negative_fraction),
            "hard_negative_fraction" => num!(cfg.dataset.hard_negative_fraction),
            "pattern_classes" => num!(cfg.dataset.pattern_classes),
            "noise_std" => num!(cfg.dataset.noise_std),
            "contrast" => num!(cfg.dataset.contrast),
            "distractor_contrast" => num!(cfg.dataset.distractor_contrast),
            "data_seed" => num!(cfg.data_seed),
            "alpha" => num!(cfg.alpha),
            "s2_loss" => set(v.parse().map(|x| cfg.s2_loss = x).map_err(|e: onion_core::Error| e.to_string())),
            "lr" => num!(cfg.lr),
            "momentum" => num!(cfg.momentum),
            "weight_decay" => num!(cfg.weight_decay),
            "lr_step" => num!(cfg.lr_step),
            "lr_decay" => num!(cfg.lr_decay),
            "epochs" => num!(cfg.epochs),
            "pretrain_epochs" => num!(cfg.pretrain_epochs),
            "batch_size" => num!(cfg.batch_size),
            "target_tpr" => set(parse_targets(v).map(|(t, d)| {
                cfg.target_tpr = t;
                tpr_default = d;
            })),
            "calibration_split" => set(parse_split(v).map(|x| cfg.calibration_split = x)),
            "infer_split" => set(parse_split(v).map(|x| cfg.infer_split = x)),
            "p_grid" => set(parse_grid(v).map(|x| cfg.p_grid = x)),
            "reps" => num!(cfg.reps),
            "warmup" => num!(cfg.warmup),
            "compaction" => set(parse_bool(v).map(|x| cfg.compaction = x)),
            "seed" => num!(cfg.seed),
            _ => errors.push(format!("unknown config key `{key}`")),
        }
    }
    if let Some(d) = tpr_default {
        cfg.default_tpr = d;
    }

    // Flags win over the file.
    if let Some(a) = &flags.arch {
        arch_source = Some(a.clone());
        base = None;
    }
    if let Some(v) = &flags.variant {
        match v.parse() {
            Ok(x) => cfg.variant = x,
            Err(e) => errors.push(format!("--variant: {e}")),
        }
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(b) = flags.batch_size {
        cfg.batch_size = b;
    }
    if let Some(g) = &flags.p_grid {
        match parse_grid(g) {
            Ok(x) => cfg.p_grid = x,
            Err(e) => errors.push(format!("--p-grid: {e}")),
        }
    }
    if let Some(r) = flags.reps {
        cfg.reps = r;
    }
    if flags.no_compaction {
        cfg.compaction = false;
    }
    cfg.checkpoint = flags.checkpoint.clone();
    cfg.thresholds = flags.thresholds.clone();
    if let Some(o) = &flags.out {
        cfg.out = o.clone();
    }

    // Architecture.
    let needs_arch = matches!(subcommand, "train" | "complexity" | "bench");
    match (&arch_source, needs_arch) {
        (Some(src), _) => match load_arch(src, base.as_deref(), &mut cfg, input_given) {
            Ok(spec) => {
                cfg.arch_source = Some(src.clone());
                cfg.arch = Some(spec.canonical());
                let variant_ok = match (spec.variant, cfg.variant) {
                    (Variant::Monolithic, Variant::Monolithic) => true,
                    (Variant::Monolithic, _) if flags.variant.is_none() && !kv.contains_key("variant") => {
                        cfg.variant = Variant::Monolithic;
                        true
                    }
                    (Variant::Monolithic, v) => {
                        errors.push(format!("a monolithic architecture cannot be run as {}", v.name()));
                        false
                    }
                    _ => true,
                };
                if variant_ok && matches!(subcommand, "train" | "bench") {
                    if let Err(e) = onion_core::cost::mac_count(&spec, InputShape::from(cfg.input)) {
                        errors.push(format!("arch on input {:?}: {e}", cfg.input));
                    }
                }
                if subcommand == "train" && spec.s2_class_count != cfg.dataset.classes() && spec.s2_class_count > 1 {
                    errors.push(format!(
                        "the final S2 layer has {} outputs but the dataset has {} classes (pattern_classes + background)",
                        spec.s2_class_count,
                        cfg.dataset.classes()
                    ));
                }
                if subcommand == "train" && spec.s2_class_count == 1 {
                    if cfg.s2_loss != S2LossKind::BinaryHinge {
                        errors.push("a single S2 output needs `s2_loss = hinge`".into());
                    }
                    if cfg.dataset.pattern_classes != 1 {
                        errors.push("a single S2 output needs `pattern_classes = 1`".into());
                    }
                }
            }
            Err(e) => errors.push(e),
        },
        (None, true) => errors.push("--arch (or `arch` in the config) is required".into()),
        (None, false) => {}
    }

    // Value ranges.
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        errors.push(format!("alpha must lie in (0, 1), got {}", cfg.alpha));
    }
    let tprs = cfg.target_tpr.iter().map(|t| t.1).chain([cfg.default_tpr]);
    for t in tprs {
        if !(t > 0.0 && t <= 1.0) {
            errors.push(format!("target TPR must lie in (0, 1], got {t}"));
        }
    }
    if let Err(e) = cfg.dataset.validate() {
        errors.push(e.to_string());
    }
    let image = (1, cfg.dataset.size, cfg.dataset.size);
    if image != cfg.input && matches!(subcommand, "train" | "calibrate" | "infer" | "bench") {
        errors.push(format!(
            "synthetic images are 1x{0}x{0} but the input is {1}x{2}x{3}",
            cfg.dataset.size, cfg.input.0, cfg.input.1, cfg.input.2
        ));
    }
    if subcommand != "complexity" && cfg.batch_size == 0 {
        errors.push("batch size must be at least 1".into());
    }
    if cfg.train_examples == 0 && matches!(subcommand, "train" | "calibrate") {
        errors.push("train_examples must be at least 1".into());
    }
    if cfg.test_examples == 0 && subcommand == "infer" {
        errors.push("test_examples must be at least 1".into());
    }
    if let Err(e) = cfg.fit_config().sgd.validate() {
        errors.push(e.to_string());
    }
    if !(cfg.lr_decay > 0.0 && cfg.lr_decay.is_finite()) {
        errors.push(format!("lr_decay must be positive, got {}", cfg.lr_decay));
    }
    if cfg.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        errors.push(format!("p grid values must lie in [0, 1], got {:?}", cfg.p_grid));
    }
    if subcommand == "bench" {
        if cfg.reps < 2 {
            errors.push(format!("reps must be at least 2, got {}", cfg.reps));
        }
        if cfg.p_grid.is_empty() {
            errors.push("the p grid is empty".into());
        }
    }
    match subcommand {
        "calibrate" | "infer" if cfg.checkpoint.is_none() => errors.push("--checkpoint is required".into()),
        _ => {}
    }
    for (flag, path) in [("--checkpoint", &cfg.checkpoint), ("--thresholds", &cfg.thresholds)] {
        if let Some(p) = path {
            if !p.is_file() {
                errors.push(format!("{flag}: {} does not exist", p.display()));
            }
        }
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}
