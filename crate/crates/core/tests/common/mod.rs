#![allow(dead_code)]

pub mod desk;
pub mod specs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use onion_core::arch::templates::{BASELINES, RETRIEVAL_VARIANTS};
use onion_core::arch::{parse_arch, ArchSpec};
use onion_core::bench::{emit_mac_csv, sweep_p, SweepConfig, VariantModels};
use onion_core::calibration::ThresholdSet;
use onion_core::cascade::{
    fit, write_loss_csv, CascadeModel, FitConfig, InferOptions, JointLossConfig, S2LossKind,
};
use onion_core::cost::{curves, mac_count, write_curve_csv, InputShape};
use onion_core::nn::{self, SgdConfig};
use onion_core::sparse::{plan_compaction_instrumented, PassMask};
use onion_core::Tensor;

/// Result of one acceptance check.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

const EPS: f64 = 1e-6;

/// Central difference of `f` with respect to every entry of `x`.
fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + EPS;
            let up = f(x);
            x[i] = orig - EPS;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error per layer kind: conv, relu, maxpool, cross-entropy,
/// hinge and the joint cascade loss, over `instances` random cases each.
pub fn gradient_errors(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let (mut conv, mut relu, mut pool, mut ce, mut hinge, mut joint) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        // Convolution: L = <R, conv(x, w, b)>.
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let (s, pad, stride) = (r.random_range(1..4), r.random_range(0..2), r.random_range(1..3));
        let h = r.random_range(s.max(3)..7);
        let x = random_tensor(&mut r, &[n, c, h, h]);
        let w = random_tensor(&mut r, &[o, c, s, s]);
        let b: Vec<f64> = (0..o).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = nn::conv_forward(&x, &w, &b, pad, stride).unwrap();
        let g = random_tensor(&mut r, y.shape());
        let grads = nn::conv_backward(&g, &x, &w, pad, stride).unwrap();
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| dot(&g, &nn::conv_forward(x, w, b, pad, stride).unwrap());
        let mut xd = x.data().to_vec();
        let num = numeric_grad(&mut xd, |v| loss(&Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap(), &w, &b));
        conv = conv.max(worst(grads.input.data(), &num));
        let mut wd = w.data().to_vec();
        let num = numeric_grad(&mut wd, |v| loss(&x, &Tensor::new(w.shape().to_vec(), v.to_vec()).unwrap(), &b));
        conv = conv.max(worst(grads.filters.data(), &num));
        let mut bd = b.clone();
        let num = numeric_grad(&mut bd, |v| loss(&x, &w, v));
        conv = conv.max(worst(&grads.bias, &num));

        // ReLU, with inputs kept away from the kink.
        let shape = [2, 2, 3, 3];
        let x = Tensor::from_fn(&shape, |_| {
            let v: f64 = r.random_range(0.05..1.0);
            if r.random_bool(0.5) { v } else { -v }
        });
        let g = random_tensor(&mut r, &shape);
        let an = nn::relu_backward(&g, &x).unwrap();
        let mut xd = x.data().to_vec();
        let num = numeric_grad(&mut xd, |v| dot(&g, &nn::relu(&Tensor::new(shape.to_vec(), v.to_vec()).unwrap())));
        relu = relu.max(worst(an.data(), &num));

        // Max pooling on distinct, well-separated values.
        let (win, st) = [(2, 2), (3, 2), (2, 1)][r.random_range(0..3)];
        let shape = [1, 2, 5, 5];
        let mut vals: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        use rand::seq::SliceRandom;
        vals.shuffle(&mut r);
        let x = Tensor::new(shape.to_vec(), vals).unwrap();
        let (y, idx) = nn::maxpool(&x, win, st).unwrap();
        let g = random_tensor(&mut r, y.shape());
        let an = nn::maxpool_backward(&g, &idx).unwrap();
        let mut xd = x.data().to_vec();
        let num = numeric_grad(&mut xd, |v| {
            dot(&g, &nn::maxpool(&Tensor::new(shape.to_vec(), v.to_vec()).unwrap(), win, st).unwrap().0)
        });
        pool = pool.max(worst(an.data(), &num));

        // Cross-entropy.
        let (n, k) = (r.random_range(1..5), r.random_range(2..6));
        let scores = random_tensor(&mut r, &[n, k]);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let (_, an) = nn::cross_entropy(&scores, &labels).unwrap();
        let mut sd = scores.data().to_vec();
        let num = numeric_grad(&mut sd, |v| nn::cross_entropy(&Tensor::new(vec![n, k], v.to_vec()).unwrap(), &labels).unwrap().0);
        ce = ce.max(worst(an.data(), &num));

        // Binary hinge, margins kept away from 1.
        let n = r.random_range(1..6);
        let labels: Vec<i8> = (0..n).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
        let scores = Tensor::from_fn(&[n, 1], |i| {
            let m: f64 = if r.random_bool(0.5) { r.random_range(-1.0..0.8) } else { r.random_range(1.2..2.0) };
            m * labels[i] as f64
        });
        let (_, an) = nn::binary_hinge(&scores, &labels).unwrap();
        let mut sd = scores.data().to_vec();
        let num = numeric_grad(&mut sd, |v| nn::binary_hinge(&Tensor::new(vec![n, 1], v.to_vec()).unwrap(), &labels).unwrap().0);
        hinge = hinge.max(worst(an.data(), &num));

        joint = joint.max(joint_gradient_error(&mut r));
    }
    vec![
        ("conv", conv),
        ("relu", relu),
        ("maxpool", pool),
        ("cross-entropy", ce),
        ("hinge", hinge),
        ("joint cascade loss", joint),
    ]
}

/// Zero biases put units with all-zero inputs exactly on the ReLU kink,
/// where finite differences are one-sided.
pub fn randomize_biases(model: &mut CascadeModel<f64>, r: &mut ChaCha8Rng) {
    for l in 1..=model.depth() {
        if let Some(p) = model.s1_params_mut(l) {
            p.bias.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
        if let Some(p) = model.s2_params_mut(l) {
            p.bias.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
    }
}

/// Joint loss of a random small cascade against finite differences on a
/// sample of S1 and S2 weights.
fn joint_gradient_error(r: &mut ChaCha8Rng) -> f64 {
    let hinge = r.random_bool(0.3);
    let k2 = if hinge { 1 } else { r.random_range(2..4) };
    let spec = specs::random_runnable_spec(r, Some(k2));
    let c = r.random_range(1..3);
    let mut model = CascadeModel::<f64>::build(&spec, c, r.random()).unwrap();
    randomize_biases(&mut model, r);
    let h = specs::input_size(&spec);
    let n = r.random_range(2..5);
    let x = random_tensor(r, &[n, c, h, h]);
    let y1: Vec<usize> = (0..n).map(|_| r.random_range(0..spec.s1_class_count)).collect();
    let k2 = k2.max(2);
    let y2: Vec<usize> = (0..n).map(|_| r.random_range(0..k2)).collect();
    let cfg = JointLossConfig {
        alpha: r.random_range(0.1..0.9),
        s2_loss_kind: if hinge { S2LossKind::BinaryHinge } else { S2LossKind::CrossEntropy },
    };
    let (_, grads) = model.joint_gradients(&x, &y1, &y2, &cfg).unwrap();
    let mut worst_err = 0.0f64;
    for _ in 0..8 {
        let stage_s1 = r.random_bool(0.5);
        let level = r.random_range(1..=model.depth());
        let (params, g) = if stage_s1 {
            (model.s1_params(level).is_some(), grads.s1[level - 1].as_ref())
        } else {
            (model.s2_params(level).is_some(), grads.s2[level - 1].as_ref())
        };
        let Some(g) = g.filter(|_| params) else { continue };
        let on_bias = r.random_bool(0.3);
        let len = if on_bias { g.bias.len() } else { g.filters.len() };
        let i = r.random_range(0..len);
        let analytic = if on_bias { g.bias[i] } else { g.filters.data()[i] };
        let mut eval = |delta: f64| {
            let p = if stage_s1 { model.s1_params_mut(level) } else { model.s2_params_mut(level) }.unwrap();
            let slot = if on_bias { &mut p.bias[i] } else { &mut p.filters.data_mut()[i] };
            *slot += delta;
            let l = model.joint_loss(&x, &y1, &y2, &cfg).unwrap().total;
            let p = if stage_s1 { model.s1_params_mut(level) } else { model.s2_params_mut(level) }.unwrap();
            let slot = if on_bias { &mut p.bias[i] } else { &mut p.filters.data_mut()[i] };
            *slot -= delta;
            l
        };
        let numeric = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
        worst_err = worst_err.max(rel_err(analytic, numeric));
    }
    worst_err
}

pub fn criterion_gradients() -> Outcome {
    let errs = gradient_errors(20, 1);
    let pass = errs.iter().all(|&(name, e)| {
        let tol = if matches!(name, "cross-entropy" | "hinge") { 1e-4 } else { 1e-3 };
        e <= tol
    });
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Outcome::new(pass, format!("20 instances each; worst relative error: {detail}"))
}

/// Monolithic envelope of a sharing cascade: S1 filters in the leading
/// output channels with zero weights on the S2 inputs, S2 filters after them.
pub fn embed_monolithic(cascade: &CascadeModel<f64>) -> CascadeModel<f64> {
    let spec = cascade.spec().derive_variants().unwrap().monolithic;
    let c = cascade.input_channels();
    let mut mono = CascadeModel::<f64>::build(&spec, c, 0).unwrap();
    let mut a_prev = c;
    for l in 1..=cascade.depth() {
        let s1 = cascade.s1_params(l);
        let s2 = cascade.s2_params(l);
        let a = s1.map_or(0, |p| p.out_channels());
        let b = s2.map_or(0, |p| p.out_channels());
        let dst = mono.s2_params_mut(l).unwrap();
        let fs = dst.filters.shape().to_vec();
        let (in_m, k) = (fs[1], fs[2] * fs[3]);
        assert_eq!(fs[0], a + b);
        dst.filters.data_mut().iter_mut().for_each(|v| *v = 0.0);
        if let Some(p) = s1 {
            for o in 0..a {
                for i in 0..a_prev {
                    let src = &p.filters.data()[(o * a_prev + i) * k..(o * a_prev + i + 1) * k];
                    dst.filters.data_mut()[(o * in_m + i) * k..(o * in_m + i + 1) * k].copy_from_slice(src);
                }
                dst.bias[o] = p.bias[o];
            }
        }
        if let Some(p) = s2 {
            let in_s2 = p.in_channels();
            assert_eq!(in_s2, in_m);
            for o in 0..b {
                let src = &p.filters.data()[o * in_s2 * k..(o + 1) * in_s2 * k];
                dst.filters.data_mut()[(a + o) * in_m * k..(a + o + 1) * in_m * k].copy_from_slice(src);
                dst.bias[a + o] = p.bias[o];
            }
        }
        a_prev = a;
    }
    mono
}

/// Largest difference between the cascade maps and the matching channel
/// blocks of the embedded monolithic network, over every level.
pub fn embedding_error(r: &mut ChaCha8Rng) -> f64 {
    let k2 = r.random_range(1..4);
    let spec = specs::random_runnable_spec(r, Some(k2));
    let c = r.random_range(1..3);
    let mut cascade = CascadeModel::<f64>::build(&spec, c, r.random()).unwrap();
    randomize_biases(&mut cascade, r);
    let mono = embed_monolithic(&cascade);
    let h = specs::input_size(&spec);
    let n = r.random_range(1..4);
    let x = random_tensor(r, &[n, c, h, h]);
    let tc = cascade.forward_trace(&x).unwrap();
    let tm = mono.forward_trace(&x).unwrap();
    let mut err = 0.0f64;
    let mut cmp = |a: &Tensor<f64>, b: &Tensor<f64>| {
        assert_eq!(a.shape(), b.shape());
        err = err.max(a.max_abs_diff(b).unwrap());
    };
    for l in 1..=cascade.depth() {
        let a = cascade.s1_params(l).map_or(0, |p| p.out_channels());
        let Some(m) = tm.s2_maps[l - 1].as_ref() else { continue };
        let (m1, m2) = m.split_channels(a).unwrap();
        if let Some(s1) = tc.s1_maps[l - 1].as_ref() {
            cmp(s1, &m1);
        }
        if let Some(s2) = tc.s2_maps[l - 1].as_ref() {
            cmp(s2, &m2);
        }
    }
    let a_last = cascade.s1_params(cascade.depth()).map_or(0, |p| p.out_channels());
    let (ms1, ms2) = tm.s2_scores.reshape_scores().split_channels(a_last).unwrap();
    cmp(&tc.s2_scores.reshape_scores(), &ms2);
    if a_last > 0 {
        cmp(&tc.s1_scores.clone().unwrap().reshape_scores(), &ms1);
    }
    err
}

trait ScoresAsMaps {
    fn reshape_scores(&self) -> Tensor<f64>;
}

impl ScoresAsMaps for Tensor<f64> {
    fn reshape_scores(&self) -> Tensor<f64> {
        let s = self.shape().to_vec();
        self.clone().reshape(vec![s[0], s[1], 1, 1]).unwrap()
    }
}

pub fn criterion_embedding() -> Outcome {
    let mut r = rng(2);
    let worst = (0..50).map(|_| embedding_error(&mut r)).fold(0.0, f64::max);
    Outcome::new(worst <= 1e-5, format!("50 random sharing specs; max |Δ| = {worst:.1e} (tol 1e-5)"))
}

/// Stage costs recomputed from the layer list: `(cost_S1, cost_S2, cost_M, reduction)`.
pub fn cost_oracle(spec: &ArchSpec, input: (usize, usize, usize)) -> (u64, u64, u64, u64) {
    use onion_core::nn::LayerKind;
    let (c, mut h, mut w) = input;
    let (mut a_prev, mut b_prev) = (c as u64, 0u64);
    let (mut s1, mut s2, mut m, mut red) = (0u64, 0u64, 0u64, 0u64);
    for l in &spec.layers {
        match l.kind {
            LayerKind::Conv { size, pad, stride } => {
                h = (h + 2 * pad - size) / stride + 1;
                w = (w + 2 * pad - size) / stride + 1;
                let area = (h * w * size * size) as u64;
                let (a, b) = (l.n_s1 as u64, l.n_s2 as u64);
                s1 += area * a_prev * a;
                s2 += area * (a_prev + b_prev) * b;
                m += area * (a_prev + b_prev) * (a + b);
                red += area * b_prev * a;
                a_prev = a;
                b_prev = b;
            }
            LayerKind::MaxPool { window, stride } => {
                h = (h - window) / stride + 1;
                w = (w - window) / stride + 1;
            }
            _ => {}
        }
    }
    (s1, s2, m, red)
}

/// `Some(description)` of the first spec whose report disagrees with the oracle.
pub fn cost_mismatch(spec: &ArchSpec, input: (usize, usize, usize)) -> Option<String> {
    let rep = mac_count(spec, InputShape::from(input)).unwrap();
    let (s1, s2, m, red) = cost_oracle(spec, input);
    let ok = rep.cost_s1 == s1
        && rep.cost_s2_shared == s2
        && rep.cost_m == m
        && rep.reduction == red
        && rep.cost_s1 + rep.cost_s2_shared == rep.cost_m - red;
    (!ok).then(|| {
        format!(
            "{spec}: report ({}, {}, {}, {}) vs oracle ({s1}, {s2}, {m}, {red})",
            rep.cost_s1, rep.cost_s2_shared, rep.cost_m, rep.reduction
        )
    })
}

pub fn criterion_cost_identity() -> Outcome {
    let mut r = rng(3);
    for i in 0..1000 {
        let (spec, input) = specs::random_cost_spec(&mut r);
        if let Some(m) = cost_mismatch(&spec, input) {
            return Outcome::new(false, format!("random spec {i}: {m}"));
        }
    }
    let mut rows = 0;
    for t in BASELINES.iter().chain(RETRIEVAL_VARIANTS) {
        for spec in [t.parse_row().unwrap(), t.parse_full().unwrap()] {
            if spec.variant == onion_core::arch::Variant::Monolithic {
                let rep = mac_count(&spec, InputShape::from(t.input)).unwrap();
                if rep.cost_m != cost_oracle(&spec, t.input).2 {
                    return Outcome::new(false, format!("{}: monolithic cost mismatch", t.name));
                }
            } else if let Some(m) = cost_mismatch(&spec, t.input) {
                return Outcome::new(false, format!("{}: {m}", t.name));
            }
            rows += 1;
        }
    }
    Outcome::new(true, format!("1000 random specs and {rows} template forms exact"))
}

pub fn criterion_curves() -> Outcome {
    let grid = onion_core::cost::uniform_grid(100);
    let step = 1e-4;
    let dense: Vec<f64> = (0..=10_000).map(|i| i as f64 * step).collect();
    let mut worst_gap = 0.0f64;
    let mut checked = 0;
    for t in RETRIEVAL_VARIANTS {
        let spec = t.parse_full().unwrap();
        let rep = mac_count(&spec, InputShape::from(t.input)).unwrap();
        let curve = curves(&rep, &grid).unwrap();
        if curve.t.iter().zip(&curve.t_ns).any(|(a, b)| a > b) {
            return Outcome::new(false, format!("{}: t(p) exceeds t_NS(p)", t.name));
        }
        if spec.variant == onion_core::arch::Variant::Monolithic {
            continue;
        }
        let closed = 1.0 - rep.cost_s1 as f64 / rep.cost_m as f64;
        if (curve.p_star - closed).abs() > 1e-12 {
            return Outcome::new(false, format!("{}: p* {} vs {closed}", t.name, curve.p_star));
        }
        let dc = curves(&rep, &dense).unwrap();
        let found = dense
            .iter()
            .zip(&dc.t_ns)
            .find(|&(_, &ns)| ns >= rep.cost_m as f64)
            .map_or(1.0, |(&p, _)| p);
        let gap = (found - curve.p_star).abs();
        worst_gap = worst_gap.max(gap);
        if gap > step {
            return Outcome::new(false, format!("{}: grid crossover {found} vs p* {}", t.name, curve.p_star));
        }
        checked += 1;
    }
    Outcome::new(
        true,
        format!("t ≤ t_NS on every retrieval config; p* within {worst_gap:.1e} of the dense grid ({checked} cascades)"),
    )
}

pub fn criterion_deep_s1() -> Outcome {
    let t = onion_core::arch::templates::find("R_D2").unwrap();
    let rep = mac_count(&t.parse_full().unwrap(), InputShape::from(t.input)).unwrap();
    let ratio = rep.cost_s1 as f64 / rep.cost_m as f64;
    Outcome::new(ratio > 0.85, format!("R_D2 cost_S1/cost_M = {ratio:.4} (> 0.85)"))
}

/// Fewest copies over every window of length `popcount`, by enumeration.
pub fn brute_force_moves(flags: &[bool]) -> usize {
    let k = flags.iter().filter(|&&f| f).count();
    if k == 0 {
        return 0;
    }
    (0..=flags.len() - k)
        .map(|s| k - flags[s..s + k].iter().filter(|&&f| f).count())
        .min()
        .unwrap()
}

pub fn criterion_compaction_optimal() -> Outcome {
    for bits in 0u32..1 << 16 {
        let flags: Vec<bool> = (0..16).map(|i| bits >> i & 1 == 1).collect();
        let mask = PassMask::new(flags.clone());
        let (plan, passes) = plan_compaction_instrumented(&mask);
        let mut gathered = plan.gather_map().to_vec();
        gathered.sort_unstable();
        if plan.moves.len() != brute_force_moves(&flags) || passes != 2 || gathered != mask.indices() {
            return Outcome::new(false, format!("mask {bits:016b}: {} moves, {passes} passes", plan.moves.len()));
        }
    }
    Outcome::new(true, "all 65536 masks of length 16 optimal with 2 mask passes")
}

/// Number of batches (out of `batches`) whose predictions or S2 scores
/// differ between compacted and row-by-row S2.
pub fn compaction_mismatches(batches: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let spec = parse_arch(desk::DESK_ARCH).unwrap();
    let model = CascadeModel::<f32>::build(&spec, 1, 5).unwrap();
    let on = InferOptions { compaction: true };
    let off = InferOptions { compaction: false };
    let mut bad = 0;
    for _ in 0..batches {
        let n = r.random_range(1..48);
        let x = Tensor::<f32>::from_fn(&[n, 1, 16, 16], |_| r.random_range(-1.0..1.0));
        let p = r.random_range(0.0..1.0);
        let mask: PassMask = (0..n).map(|_| r.random_bool(p)).collect();
        let (pa, sa) = model.run_with_mask(&x, &mask, on).unwrap();
        let (pb, sb) = model.run_with_mask(&x, &mask, off).unwrap();
        let s1 = model.forward_s1(&x).unwrap();
        let score_bits = |opts| {
            let mut s = s1.clone();
            let out = model.forward_s2_shared(&mut s, &mask, opts).unwrap();
            let mut rows: Vec<(usize, Vec<u32>)> = out
                .rows
                .iter()
                .enumerate()
                .map(|(j, &i)| (i, out.scores.row(j).iter().map(|v| v.to_bits()).collect()))
                .collect();
            rows.sort();
            rows
        };
        let thr = ThresholdSet::uniform(&[1], r.random_range(0.3f32..0.7));
        let ia = model.infer_cascade(&x, &thr, on).unwrap();
        let ib = model.infer_cascade(&x, &thr, off).unwrap();
        if pa != pb || sa.macs != sb.macs || score_bits(on) != score_bits(off) || ia.predictions != ib.predictions {
            bad += 1;
        }
    }
    bad
}

pub fn criterion_compaction_transparent() -> Outcome {
    let bad = compaction_mismatches(100, 8);
    Outcome::new(bad == 0, format!("100 random batches, {bad} differ bit-wise"))
}

/// Every deterministic artifact of a small pipeline, serialized.
pub fn pipeline_artifacts(seed: u64) -> Vec<(&'static str, Vec<u8>)> {
    use onion_core::bench::{make_dataset, DatasetConfig};
    let spec = parse_arch(desk::DESK_ARCH).unwrap();
    let data = make_dataset::<f32>(
        &DatasetConfig {
            examples: 300,
            ..DatasetConfig::default()
        },
        seed,
    )
    .unwrap();
    let mut model = CascadeModel::<f32>::build(&spec, 1, seed).unwrap();
    let cfg = FitConfig {
        epochs: 2,
        batch_size: 32,
        sgd: SgdConfig {
            lr: 0.02,
            ..SgdConfig::default()
        },
        seed,
        ..FitConfig::default()
    };
    let logs = fit(&mut model, &data.images, &data.s1_labels, &data.s2_labels, &cfg, |_| {}).unwrap();
    let mut loss = Vec::new();
    write_loss_csv(&logs, &mut loss).unwrap();
    let probs = model.forward_s1(&data.images).unwrap().probabilities();
    let thr = ThresholdSet::calibrate(&probs, &data.s1_labels, &[(1, 0.95)]).unwrap();
    let rep = mac_count(&spec, InputShape::new(1, 16, 16)).unwrap();
    let mut cost = Vec::new();
    write_curve_csv(&curves(&rep, &onion_core::cost::uniform_grid(20)).unwrap(), &mut cost).unwrap();
    let models = VariantModels::<f32>::build(&spec, 1, seed).unwrap();
    let run = sweep_p(
        &models,
        &data.images.slice_rows(0..40).unwrap(),
        &SweepConfig {
            p_grid: vec![0.0, 0.25, 0.5, 1.0],
            reps: 2,
            warmup: 0,
            seed,
            compaction: true,
        },
    )
    .unwrap();
    let mut macs = Vec::new();
    emit_mac_csv(&run, &mut macs).unwrap();
    vec![
        ("checkpoint", model.to_bytes().unwrap()),
        ("loss csv", loss),
        ("thresholds", thr.to_table().into_bytes()),
        ("cost csv", cost),
        ("mac csv", macs),
    ]
}

pub fn criterion_determinism() -> Outcome {
    let a = pipeline_artifacts(21);
    let b = pipeline_artifacts(21);
    let c = pipeline_artifacts(22);
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();
    let seed_sensitive = a[0].1 != c[0].1;
    Outcome::new(
        differing.is_empty() && seed_sensitive,
        if differing.is_empty() {
            format!("{} artifacts byte-equal across runs; a different seed changes the checkpoint: {seed_sensitive}", a.len())
        } else {
            format!("differ between identical runs: {differing:?}")
        },
    )
}
