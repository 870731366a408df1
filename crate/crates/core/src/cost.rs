//! Analytic time-complexity model.
//!
//! The unit is one multiply-accumulate (MAC). A convolution with `n_in`
//! input channels, `n_out` filters of size `s×s` and an `h×w` output map
//! costs `n_in · s² · n_out · h · w`. Non-convolutional layers are free
//! unless [`CostOptions::include_elementwise`] is set.
//!
//! For a split spec with widths `(a_l, b_l)` per level (S1, S2), and the
//! input counted as S1 level 0:
//!
//! * S1 costs `a_{l−1} s² a_l m²`,
//! * shared S2 costs `(a_{l−1} + b_{l−1}) s² b_l m²`,
//! * the monolithic envelope costs `(a_{l−1} + b_{l−1}) s² (a_l + b_l) m²`,
//! * the non-sharing S2 is as wide as the envelope and costs the same,
//!
//! so `S1 + S2_shared = M − Σ b_{l−1} s² a_l m²` level by level.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::{layer_token, ArchSpec};
use crate::error::{invalid, Error, Result};
use crate::nn::{window_out, LayerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }
}

impl From<(usize, usize, usize)> for InputShape {
    fn from((c, h, w): (usize, usize, usize)) -> Self {
        Self::new(c, h, w)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostOptions {
    /// Charge ReLU one op per element and max pooling `window²` ops per
    /// output element.
    pub include_elementwise: bool,
}

/// Cost of one convolution (a residual block contributes up to three).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvOpCost {
    pub level: usize,
    pub label: String,
    pub size: usize,
    /// `(S1, S2)` channel counts entering the op.
    pub in_split: (usize, usize),
    /// `(S1, S2)` filter counts.
    pub out_split: (usize, usize),
    /// Output spatial size `m_l` of the shared / monolithic path.
    pub out_hw: (usize, usize),
    /// Output spatial size seen by S1 (differs only after an S1-only pool).
    pub s1_out_hw: (usize, usize),
    pub macs_s1: u64,
    pub macs_s2_shared: u64,
    pub macs_s2_ns: u64,
    pub macs_m: u64,
    /// `b_{l−1} · s² · a_l · m²`, the work saved by not connecting S2 to S1.
    pub reduction: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCosts {
    pub s1: u64,
    pub s2_shared: u64,
    pub s2_ns: u64,
    pub m: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub ops: Vec<ConvOpCost>,
    pub cost_m: u64,
    pub cost_s1: u64,
    pub cost_s2_shared: u64,
    pub cost_s2_ns: u64,
    /// Sum of all per-op reduction terms.
    pub reduction: u64,
    /// Number of convolutions in S1 and S2.
    pub depth_s1: usize,
    pub depth_s2: usize,
    pub params: ParamReport,
    pub elementwise: Option<StageCosts>,
}

impl CostReport {
    /// Stage totals used for the `t(p)` curves.
    pub fn stage_costs(&self) -> StageCosts {
        let e = self.elementwise.unwrap_or_default();
        StageCosts {
            s1: self.cost_s1 + e.s1,
            s2_shared: self.cost_s2_shared + e.s2_shared,
            s2_ns: self.cost_s2_ns + e.s2_ns,
            m: self.cost_m + e.m,
        }
    }

    /// `S1 + S2_shared == M − reduction`, checked in exact integer arithmetic.
    pub fn reduction_identity_holds(&self) -> bool {
        self.cost_s1 + self.cost_s2_shared + self.reduction == self.cost_m
    }

    /// Per-example MACs of a cascade pass over `batch` examples of which
    /// `passed` reach S2.
    pub fn batch_macs(&self, batch: u64, passed: u64) -> u64 {
        batch * self.cost_s1 + passed * self.cost_s2_shared
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str("level  op                 m        S1           S2(shared)   M            reduction\n");
        for op in &self.ops {
            s.push_str(&format!(
                "{:<6} {:<18} {:<8} {:<12} {:<12} {:<12} {}\n",
                op.level,
                op.label,
                format!("{}x{}", op.out_hw.0, op.out_hw.1),
                op.macs_s1,
                op.macs_s2_shared,
                op.macs_m,
                op.reduction
            ));
        }
        s.push_str(&format!(
            "total  S1 = {}, S2 shared = {}, S2 non-sharing = {}, M = {}, reduction = {}\n",
            self.cost_s1, self.cost_s2_shared, self.cost_s2_ns, self.cost_m, self.reduction
        ));
        s.push_str(&format!(
            "params M = {}, sharing = {} (S1 {} + S2 {}), non-sharing = {}\n",
            self.params.monolithic,
            self.params.sharing,
            self.params.s1,
            self.params.s2_shared,
            self.params.non_sharing
        ));
        s
    }
}

struct Walker {
    a_prev: usize,
    b_prev: usize,
    hw: (usize, usize),
    s1_hw: Option<(usize, usize)>,
    level: usize,
    ops: Vec<ConvOpCost>,
    elementwise: StageCosts,
    include_elementwise: bool,
}

impl Walker {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        label: String,
        size: usize,
        pad: usize,
        stride: usize,
        in_split: (usize, usize),
        out_split: (usize, usize),
        input_hw: (usize, usize),
        s1_input_hw: (usize, usize),
    ) -> Result<(usize, usize)> {
        let out = |(h, w): (usize, usize)| -> Result<(usize, usize)> {
            match (window_out(h, size, pad, stride), window_out(w, size, pad, stride)) {
                (Some(ho), Some(wo)) => Ok((ho, wo)),
                _ => Err(Error::InvalidArch(format!(
                    "spatial size collapses to zero at level {} (`{label}` on a {h}×{w} map)",
                    self.level
                ))),
            }
        };
        let out_hw = out(input_hw)?;
        let s1_out_hw = if out_split.0 > 0 { out(s1_input_hw)? } else { out_hw };
        let (a_in, b_in) = in_split;
        let (a, b) = out_split;
        let s2 = (size * size) as u64;
        let m2 = (out_hw.0 * out_hw.1) as u64;
        let m2_s1 = (s1_out_hw.0 * s1_out_hw.1) as u64;
        let macs_m = (a_in + b_in) as u64 * s2 * (a + b) as u64 * m2;
        self.ops.push(ConvOpCost {
            level: self.level,
            label,
            size,
            in_split,
            out_split,
            out_hw,
            s1_out_hw,
            macs_s1: a_in as u64 * s2 * a as u64 * m2_s1,
            macs_s2_shared: (a_in + b_in) as u64 * s2 * b as u64 * m2,
            macs_s2_ns: macs_m,
            macs_m,
            reduction: b_in as u64 * s2 * a as u64 * m2,
        });
        Ok(out_hw)
    }

    fn charge(&mut self, per_channel: u64, per_channel_s1: u64) {
        if !self.include_elementwise {
            return;
        }
        let (a, b) = (self.a_prev as u64, self.b_prev as u64);
        self.elementwise.s1 += a * per_channel_s1;
        self.elementwise.s2_shared += b * per_channel;
        self.elementwise.s2_ns += (a + b) * per_channel;
        self.elementwise.m += (a + b) * per_channel;
    }
}

/// MAC accounting for the monolithic envelope, S1, shared S2 and the
/// non-sharing S2 of `spec` on inputs of the given shape.
pub fn mac_count(spec: &ArchSpec, input: InputShape) -> Result<CostReport> {
    mac_count_with(spec, input, CostOptions::default())
}

pub fn mac_count_with(spec: &ArchSpec, input: InputShape, opts: CostOptions) -> Result<CostReport> {
    if input.channels == 0 || input.height == 0 || input.width == 0 {
        return Err(invalid("input shape must be positive"));
    }
    let mut w = Walker {
        a_prev: input.channels,
        b_prev: 0,
        hw: (input.height, input.width),
        s1_hw: None,
        level: 0,
        ops: Vec::new(),
        elementwise: StageCosts::default(),
        include_elementwise: opts.include_elementwise,
    };
    for layer in &spec.layers {
        let token = layer_token(layer);
        match layer.kind {
            LayerKind::Conv { size, pad, stride } => {
                w.level += 1;
                let s1_in = w.s1_hw.take().unwrap_or(w.hw);
                let (a, b) = (layer.n_s1, layer.n_s2);
                w.hw = w.conv(token, size, pad, stride, (w.a_prev, w.b_prev), (a, b), w.hw, s1_in)?;
                w.a_prev = a;
                w.b_prev = b;
            }
            LayerKind::Residual { size, stride } => {
                w.level += 1;
                let (a, b) = (layer.n_s1, layer.n_s2);
                let pad = size / 2;
                let block_in = (w.a_prev, w.b_prev);
                let in_hw = w.hw;
                let hw1 = w.conv(format!("{token}/a"), size, pad, stride, block_in, (a, b), in_hw, in_hw)?;
                w.conv(format!("{token}/b"), size, pad, 1, (a, b), (a, b), hw1, hw1)?;
                if stride != 1 || block_in != (a, b) {
                    w.conv(format!("{token}/proj"), 1, 0, stride, block_in, (a, b), in_hw, in_hw)?;
                }
                w.hw = hw1;
                w.a_prev = a;
                w.b_prev = b;
            }
            LayerKind::Relu => {
                let n = (w.hw.0 * w.hw.1) as u64;
                w.charge(n, n);
            }
            LayerKind::MaxPool { window, stride } => {
                let (h, wd) = w.hw;
                let (Some(ho), Some(wo)) = (window_out(h, window, 0, stride), window_out(wd, window, 0, stride))
                else {
                    return Err(Error::InvalidArch(format!(
                        "spatial size collapses to zero after level {} (`{token}` on a {h}×{wd} map)",
                        w.level
                    )));
                };
                let per = (ho * wo * window * window) as u64;
                if layer.s1_only {
                    w.s1_hw = Some((ho, wo));
                    if w.include_elementwise {
                        w.elementwise.s1 += w.a_prev as u64 * per;
                    }
                } else {
                    w.charge(per, per);
                    w.hw = (ho, wo);
                }
            }
            LayerKind::Flatten => {
                return Err(Error::Unsupported("flatten layers are not costed".into()))
            }
        }
    }

    let sum = |f: fn(&ConvOpCost) -> u64| w.ops.iter().map(f).sum::<u64>();
    let report = CostReport {
        cost_m: sum(|o| o.macs_m),
        cost_s1: sum(|o| o.macs_s1),
        cost_s2_shared: sum(|o| o.macs_s2_shared),
        cost_s2_ns: sum(|o| o.macs_s2_ns),
        reduction: sum(|o| o.reduction),
        depth_s1: w.ops.iter().filter(|o| o.out_split.0 > 0).count(),
        depth_s2: w.ops.iter().filter(|o| o.out_split.1 > 0).count(),
        params: params_from_ops(&w.ops),
        elementwise: opts.include_elementwise.then_some(w.elementwise),
        ops: w.ops,
    };
    Ok(report)
}

/// Weight and bias totals per variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub monolithic: u64,
    pub s1: u64,
    pub s2_shared: u64,
    pub sharing: u64,
    pub s2_ns: u64,
    pub non_sharing: u64,
    /// Weights removed by the missing S2→S1 connections, `Σ s² b_{l−1} a_l`.
    pub reduction: u64,
}

fn params_from_ops(ops: &[ConvOpCost]) -> ParamReport {
    let mut p = ParamReport::default();
    for op in ops {
        let s2 = (op.size * op.size) as u64;
        let (a_in, b_in) = (op.in_split.0 as u64, op.in_split.1 as u64);
        let (a, b) = (op.out_split.0 as u64, op.out_split.1 as u64);
        let mono = (a_in + b_in) * s2 * (a + b) + a + b;
        p.monolithic += mono;
        p.s1 += a_in * s2 * a + a;
        p.s2_shared += (a_in + b_in) * s2 * b + b;
        p.s2_ns += mono;
        p.reduction += b_in * s2 * a;
    }
    p.sharing = p.s1 + p.s2_shared;
    p.non_sharing = p.s1 + p.s2_ns;
    p
}

/// Parameter counts (weights plus biases) of every variant of `spec` for
/// inputs with `in_channels` channels. Spatial sizes play no role.
pub fn param_count(spec: &ArchSpec, in_channels: usize) -> ParamReport {
    let mut ops = Vec::new();
    let (mut a_prev, mut b_prev) = (in_channels, 0);
    let mut push = |size: usize, in_split, out_split| {
        ops.push(ConvOpCost {
            level: 0,
            label: String::new(),
            size,
            in_split,
            out_split,
            out_hw: (1, 1),
            s1_out_hw: (1, 1),
            macs_s1: 0,
            macs_s2_shared: 0,
            macs_s2_ns: 0,
            macs_m: 0,
            reduction: 0,
        })
    };
    for l in &spec.layers {
        let out = (l.n_s1, l.n_s2);
        match l.kind {
            LayerKind::Conv { size, .. } => push(size, (a_prev, b_prev), out),
            LayerKind::Residual { size, stride } => {
                push(size, (a_prev, b_prev), out);
                push(size, out, out);
                if stride != 1 || (a_prev, b_prev) != out {
                    push(1, (a_prev, b_prev), out);
                }
            }
            _ => continue,
        }
        (a_prev, b_prev) = out;
    }
    params_from_ops(&ops)
}

/// `t(p)`, `t_M(p)` and `t_NS(p)` sampled on a grid of pass fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub p_grid: Vec<f64>,
    pub t: Vec<f64>,
    pub t_m: Vec<f64>,
    pub t_ns: Vec<f64>,
    /// Pass fraction above which the non-sharing cascade costs more than
    /// the monolithic network, `1 − S1/M`.
    pub p_star: f64,
}

pub fn curves(report: &CostReport, p_grid: &[f64]) -> Result<CostCurve> {
    if let Some(bad) = p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid(format!("pass fraction {bad} outside [0, 1]")));
    }
    let c = report.stage_costs();
    let (s1, s2, ns, m) = (c.s1 as f64, c.s2_shared as f64, c.s2_ns as f64, c.m as f64);
    if report.depth_s1 == 0 {
        // Without a rejection stage every example runs the whole network.
        let flat = vec![m; p_grid.len()];
        return Ok(CostCurve {
            p_grid: p_grid.to_vec(),
            t: flat.clone(),
            t_m: flat.clone(),
            t_ns: flat,
            p_star: 1.0,
        });
    }
    Ok(CostCurve {
        p_grid: p_grid.to_vec(),
        t: p_grid.iter().map(|p| s1 + p * s2).collect(),
        t_m: vec![m; p_grid.len()],
        t_ns: p_grid.iter().map(|p| s1 + p * ns).collect(),
        p_star: if m > 0.0 { 1.0 - s1 / m } else { 0.0 },
    })
}

/// Evenly spaced grid `0, 1/steps, …, 1`.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// CSV with columns `p,t,t_M,t_NS` and a trailing `p*` summary row.
pub fn write_curve_csv<W: Write>(curve: &CostCurve, mut out: W) -> Result<()> {
    writeln!(out, "p,t,t_M,t_NS")?;
    for i in 0..curve.p_grid.len() {
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6}",
            curve.p_grid[i], curve.t[i], curve.t_m[i], curve.t_ns[i]
        )?;
    }
    writeln!(out, "p*,{:.6},,", curve.p_star)?;
    Ok(())
}
