//! Textual architecture notation for stage pairs.
//!
//! A spec is a comma (or newline) separated token list:
//!
//! | token            | meaning                                                     |
//! |------------------|-------------------------------------------------------------|
//! | `C<s>(n)`        | convolution with `s×s` filters (single width)               |
//! | `C<s>(a/b)`      | convolution pair: `a` filters in S1, `b` in S2 (`-` = none) |
//! | `B<s>(a/b)`      | basic residual block (cost model only)                      |
//! | `P<w>`           | `w×w` max pooling, stride `w` unless `s<k>` is given         |
//! | `P<w>@S1`        | pooling applied on the S1 path only, before its last conv   |
//! | `R`              | ReLU                                                        |
//! | `<k>x<token>`    | repeat a token `k` times (`×` is accepted too)              |
//! | `<k>x[a, b, …]`  | repeat a group                                              |
//! | `@sharing` …     | optional leading variant directive                          |
//!
//! Conv and residual tokens take optional `s<stride>` and `p<pad>` suffixes,
//! e.g. `C11(64)s4` or `C3(32/224)p1`. `#` starts a comment.
//!
//! In a sharing spec a single-width conv `C<s>(n)` is a layer owned by S1 and
//! read by S2 (equivalent to `C<s>(n/-)`); in a monolithic spec it is the one
//! and only width.

mod parse;
pub mod templates;

use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerKind;

pub use parse::parse_arch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Monolithic,
    Sharing,
    NonSharing,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Monolithic => "monolithic",
            Variant::Sharing => "sharing",
            Variant::NonSharing => "non-sharing",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "monolithic" | "m" => Ok(Variant::Monolithic),
            "sharing" | "onion" => Ok(Variant::Sharing),
            "non-sharing" | "nonsharing" | "ns" => Ok(Variant::NonSharing),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

/// One entry of a stage-pair description.
///
/// For convolutions `n_s1` / `n_s2` are the filter counts of each stage
/// (zero when the stage has no filters at this level). Non-parametric layers
/// carry zero widths and apply to every stage, unless `s1_only` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitLayerSpec {
    pub kind: LayerKind,
    pub n_s1: usize,
    pub n_s2: usize,
    pub s1_only: bool,
}

impl SplitLayerSpec {
    pub fn conv(size: usize, pad: usize, stride: usize, n_s1: usize, n_s2: usize) -> Self {
        Self {
            kind: LayerKind::Conv { size, pad, stride },
            n_s1,
            n_s2,
            s1_only: false,
        }
    }

    pub fn relu() -> Self {
        Self::plain(LayerKind::Relu)
    }

    pub fn pool(window: usize, stride: usize) -> Self {
        Self::plain(LayerKind::MaxPool { window, stride })
    }

    fn plain(kind: LayerKind) -> Self {
        Self {
            kind,
            n_s1: 0,
            n_s2: 0,
            s1_only: false,
        }
    }

    pub fn is_conv(&self) -> bool {
        self.kind.is_conv()
    }

    /// Filter size of a conv-like layer.
    pub fn filter_size(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv { size, .. } | LayerKind::Residual { size, .. } => Some(size),
            _ => None,
        }
    }

    pub fn width(&self) -> usize {
        self.n_s1 + self.n_s2
    }
}

/// A validated stage-pair architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<SplitLayerSpec>,
    pub variant: Variant,
    /// Number of S1 output classes `|K|` (zero for monolithic specs).
    pub s1_class_count: usize,
    pub s2_class_count: usize,
}

/// Per-level view of the conv layers: level `l` (1-based) is the `l`-th
/// conv-like entry of the layer list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLevel {
    pub level: usize,
    pub layer_index: usize,
    pub spec: SplitLayerSpec,
}

impl ArchSpec {
    /// Build and validate a spec from already-resolved layers.
    pub fn new(layers: Vec<SplitLayerSpec>, variant: Variant) -> Result<Self> {
        let names: Vec<String> = layers.iter().map(layer_token).collect();
        validate(&layers, variant, &names)?;
        Ok(Self::from_validated(layers, variant))
    }

    pub(crate) fn from_validated(layers: Vec<SplitLayerSpec>, variant: Variant) -> Self {
        let convs: Vec<&SplitLayerSpec> = layers.iter().filter(|l| l.is_conv()).collect();
        let s1_class_count = convs.iter().rev().find(|l| l.n_s1 > 0).map_or(0, |l| l.n_s1);
        let s2_class_count = convs.last().map_or(0, |l| l.n_s2);
        Self {
            layers,
            variant,
            s1_class_count,
            s2_class_count,
        }
    }

    pub fn conv_levels(&self) -> Vec<ConvLevel> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_conv())
            .enumerate()
            .map(|(i, (layer_index, spec))| ConvLevel {
                level: i + 1,
                layer_index,
                spec: *spec,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.iter().filter(|l| l.is_conv()).count()
    }

    /// Levels (1-based, inclusive) where S1 has filters.
    pub fn s1_levels(&self) -> Option<RangeInclusive<usize>> {
        level_range(self.conv_levels().iter().map(|c| c.spec.n_s1 > 0))
    }

    /// Levels (1-based, inclusive) where S2 has filters.
    pub fn s2_levels(&self) -> Option<RangeInclusive<usize>> {
        level_range(self.conv_levels().iter().map(|c| c.spec.n_s2 > 0))
    }

    pub fn has_residual(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Residual { .. }))
    }

    pub fn has_s1_only_layers(&self) -> bool {
        self.layers.iter().any(|l| l.s1_only)
    }

    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        match (self.variant, variant) {
            (a, b) if a == b => Ok(self.clone()),
            (Variant::Sharing, Variant::NonSharing) | (Variant::NonSharing, Variant::Sharing) => {
                Ok(Self {
                    variant,
                    ..self.clone()
                })
            }
            (_, Variant::Monolithic) => Ok(self.derive_variants()?.monolithic),
            (Variant::Monolithic, _) => Err(Error::InvalidArch(
                "a monolithic spec has no stage split to share".into(),
            )),
            _ => unreachable!(),
        }
    }

    /// Monolithic, sharing and non-sharing forms of a split spec.
    ///
    /// The monolithic form keeps the effective number of filters per level
    /// (`n_s1 + n_s2`); the non-sharing form keeps the split but its S2 reads
    /// only the raw input and its own maps, which makes it as wide as the
    /// monolithic network at every level.
    pub fn derive_variants(&self) -> Result<Variants> {
        if self.variant == Variant::Monolithic {
            return Err(Error::InvalidArch(
                "derive_variants needs a split (sharing or non-sharing) spec".into(),
            ));
        }
        let mono_layers: Vec<SplitLayerSpec> = self
            .layers
            .iter()
            .filter(|l| !l.s1_only)
            .map(|l| SplitLayerSpec {
                n_s1: 0,
                n_s2: l.width(),
                ..*l
            })
            .collect();
        Ok(Variants {
            monolithic: Self::from_validated(mono_layers, Variant::Monolithic),
            sharing: self.with_variant(Variant::Sharing)?,
            non_sharing: self.with_variant(Variant::NonSharing)?,
        })
    }

    /// The S1 stage on its own: every entry up to and including the last S1
    /// conv, with S1 widths only, as a monolithic spec.
    pub fn s1_network(&self) -> Option<Self> {
        let last = self.s1_levels()?.into_inner().1;
        let levels = self.conv_levels();
        let end = levels[last - 1].layer_index;
        let layers = self.layers[..=end]
            .iter()
            .map(|l| SplitLayerSpec {
                n_s1: 0,
                n_s2: l.n_s1,
                s1_only: false,
                ..*l
            })
            .collect();
        Some(Self::from_validated(layers, Variant::Monolithic))
    }

    /// Canonical text form; `parse_arch(spec.canonical())` returns `spec`.
    pub fn canonical(&self) -> String {
        let mut tokens = Vec::with_capacity(self.layers.len() + 1);
        if self.variant == Variant::NonSharing {
            tokens.push("@non-sharing".to_string());
        }
        for l in &self.layers {
            tokens.push(match self.variant {
                Variant::Monolithic => mono_token(l),
                _ => layer_token(l),
            });
        }
        tokens.join(", ")
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variants {
    pub monolithic: ArchSpec,
    pub sharing: ArchSpec,
    pub non_sharing: ArchSpec,
}

fn level_range(present: impl Iterator<Item = bool>) -> Option<RangeInclusive<usize>> {
    let flags: Vec<bool> = present.collect();
    let first = flags.iter().position(|&p| p)?;
    let last = flags.iter().rposition(|&p| p)?;
    Some(first + 1..=last + 1)
}

fn width_str(n: usize) -> String {
    if n == 0 {
        "-".into()
    } else {
        n.to_string()
    }
}

fn conv_suffix(pad: usize, stride: usize) -> String {
    let mut s = String::new();
    if stride != 1 {
        s.push_str(&format!("s{stride}"));
    }
    if pad != 0 {
        s.push_str(&format!("p{pad}"));
    }
    s
}

fn non_conv_token(l: &SplitLayerSpec) -> Option<String> {
    match l.kind {
        LayerKind::Relu => Some("R".into()),
        LayerKind::Flatten => Some("F".into()),
        LayerKind::MaxPool { window, stride } => {
            let mut t = format!("P{window}");
            if stride != window {
                t.push_str(&format!("s{stride}"));
            }
            if l.s1_only {
                t.push_str("@S1");
            }
            Some(t)
        }
        _ => None,
    }
}

/// Token in split notation.
pub(crate) fn layer_token(l: &SplitLayerSpec) -> String {
    if let Some(t) = non_conv_token(l) {
        return t;
    }
    let widths = format!("{}/{}", width_str(l.n_s1), width_str(l.n_s2));
    match l.kind {
        LayerKind::Conv { size, pad, stride } => {
            format!("C{size}({widths}){}", conv_suffix(pad, stride))
        }
        LayerKind::Residual { size, stride } => {
            format!("B{size}({widths}){}", conv_suffix(0, stride))
        }
        _ => unreachable!(),
    }
}

fn mono_token(l: &SplitLayerSpec) -> String {
    if let Some(t) = non_conv_token(l) {
        return t;
    }
    match l.kind {
        LayerKind::Conv { size, pad, stride } => {
            format!("C{size}({}){}", l.n_s2, conv_suffix(pad, stride))
        }
        LayerKind::Residual { size, stride } => {
            format!("B{size}({}){}", l.n_s2, conv_suffix(0, stride))
        }
        _ => unreachable!(),
    }
}

fn arch_err(token: &str, reason: impl Into<String>) -> Error {
    Error::ArchParse {
        token: token.to_string(),
        reason: reason.into(),
    }
}

/// Structural checks shared by the parser and [`ArchSpec::new`]. `names`
/// holds the source token of each layer for error messages.
pub(crate) fn validate(layers: &[SplitLayerSpec], variant: Variant, names: &[String]) -> Result<()> {
    let convs: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].is_conv()).collect();
    if convs.is_empty() {
        return Err(Error::InvalidArch("no convolutional layer".into()));
    }
    for (i, l) in layers.iter().enumerate() {
        match l.kind {
            LayerKind::Conv { size, stride, .. } | LayerKind::Residual { size, stride } => {
                if size == 0 || stride == 0 {
                    return Err(arch_err(&names[i], "filter size and stride must be at least 1"));
                }
                if l.width() == 0 {
                    return Err(arch_err(&names[i], "zero-width pair"));
                }
            }
            LayerKind::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(arch_err(&names[i], "pool window and stride must be at least 1"));
                }
            }
            LayerKind::Relu => {}
            LayerKind::Flatten => {
                return Err(arch_err(&names[i], "flatten is implicit; use a full-size convolution"))
            }
        }
        if l.s1_only && !matches!(l.kind, LayerKind::MaxPool { .. }) {
            return Err(arch_err(&names[i], "only pooling can be restricted to S1"));
        }
    }

    if variant == Variant::Monolithic {
        if let Some(&i) = convs.iter().find(|&&i| layers[i].n_s1 > 0) {
            return Err(arch_err(&names[i], "monolithic spec cannot contain a stage pair"));
        }
        if let Some(i) = layers.iter().position(|l| l.s1_only) {
            return Err(arch_err(&names[i], "monolithic spec has no S1 path"));
        }
        return Ok(());
    }

    // S1 must be a prefix of the conv levels, S2 a suffix.
    let first_s1_gap = convs.iter().position(|&i| layers[i].n_s1 == 0);
    let s1_last = match first_s1_gap {
        Some(0) => return Err(arch_err(&names[convs[0]], "S1 must start at the first layer")),
        Some(g) => {
            if let Some(&i) = convs[g..].iter().find(|&&i| layers[i].n_s1 > 0) {
                return Err(arch_err(&names[i], "non-contiguous S1 stage"));
            }
            g - 1
        }
        None => convs.len() - 1,
    };
    let Some(s2_first) = convs.iter().position(|&i| layers[i].n_s2 > 0) else {
        return Err(Error::InvalidArch("S2 has no filters at any level".into()));
    };
    if let Some(&i) = convs[s2_first..].iter().find(|&&i| layers[i].n_s2 == 0) {
        return Err(arch_err(&names[i], "non-contiguous S2 stage"));
    }
    if s2_first > s1_last + 1 {
        return Err(arch_err(
            &names[convs[s2_first]],
            "S2 starts after S1 ends, leaving a level without filters",
        ));
    }

    let s1_only: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].s1_only).collect();
    match s1_only.as_slice() {
        [] => {}
        [i] => {
            if i + 1 != convs[s1_last] {
                return Err(arch_err(
                    &names[*i],
                    "an S1-only pool must directly precede the final S1 convolution",
                ));
            }
        }
        [_, j, ..] => return Err(arch_err(&names[*j], "at most one S1-only pool is allowed")),
    }
    Ok(())
}
