use rand::Rng;
use rand_chacha::ChaCha8Rng;

use onion_core::arch::{ArchSpec, SplitLayerSpec, Variant};
use onion_core::nn::{window_out, LayerKind};

/// Widths of a random valid stage pair over `depth` levels: S1 is a
/// non-empty prefix, S2 a suffix starting no later than one level after S1.
fn random_widths(r: &mut ChaCha8Rng, depth: usize, max: usize) -> Vec<(usize, usize)> {
    let d1 = r.random_range(1..=depth);
    let s2_start = r.random_range(1..=(d1 + 1).min(depth));
    (1..=depth)
        .map(|l| {
            let a = if l <= d1 { r.random_range(1..=max) } else { 0 };
            let b = if l >= s2_start { r.random_range(1..=max) } else { 0 };
            (a, b)
        })
        .collect()
}

/// Small sharing spec the cascade model can run: both heads end at 1×1,
/// with the S1 head at least two classes wide. `s2_classes` pins the final
/// S2 width.
pub fn random_runnable_spec(r: &mut ChaCha8Rng, s2_classes: Option<usize>) -> ArchSpec {
    let depth = r.random_range(2..=4);
    let mut widths = random_widths(r, depth, 3);
    let d1 = widths.iter().rposition(|w| w.0 > 0).unwrap() + 1;
    widths[d1 - 1].0 = r.random_range(2..=3);
    if let Some(k) = s2_classes {
        widths[depth - 1].1 = k;
    }
    let mut size = r.random_range(4..=6);
    let mut layers = Vec::new();
    for (l, &(a, b)) in widths.iter().enumerate() {
        let level = l + 1;
        if level < d1 {
            let (s, pad) = if r.random_bool(0.7) { (3, 1) } else { (1, 0) };
            layers.push(SplitLayerSpec::conv(s, pad, 1, a, b));
            layers.push(SplitLayerSpec::relu());
            if size >= 4 && r.random_bool(0.5) {
                layers.push(SplitLayerSpec::pool(2, 2));
                size /= 2;
            }
        } else if level == d1 {
            layers.push(SplitLayerSpec::conv(size, 0, 1, a, b));
            size = 1;
            if level < depth {
                layers.push(SplitLayerSpec::relu());
            }
        } else {
            layers.push(SplitLayerSpec::conv(1, 0, 1, a, b));
            if level < depth {
                layers.push(SplitLayerSpec::relu());
            }
        }
    }
    ArchSpec::new(layers, Variant::Sharing).unwrap()
}

fn propagate(spec: &ArchSpec, mut h: usize) -> Option<Vec<usize>> {
    let mut after_conv = Vec::new();
    for l in &spec.layers {
        h = match l.kind {
            LayerKind::Conv { size, pad, stride } => {
                let o = window_out(h, size, pad, stride)?;
                after_conv.push(o);
                o
            }
            LayerKind::MaxPool { window, stride } => window_out(h, window, 0, stride)?,
            _ => h,
        };
    }
    Some(after_conv)
}

/// Smallest square input on which every head of `spec` ends at 1×1.
pub fn input_size(spec: &ArchSpec) -> usize {
    let d1 = spec.s1_levels().map_or(0, |r| *r.end());
    (1..=64)
        .find(|&h| {
            propagate(spec, h).is_some_and(|sizes| {
                *sizes.last().unwrap() == 1 && (d1 == 0 || sizes[d1 - 1] == 1)
            })
        })
        .expect("spec reduces to 1×1 for some input")
}

/// Random sharing spec for the cost model (no spatial constraint on the
/// heads), with its `(channels, height, width)` input.
pub fn random_cost_spec(r: &mut ChaCha8Rng) -> (ArchSpec, (usize, usize, usize)) {
    let input = (r.random_range(1..=4), r.random_range(8..=48), r.random_range(8..=48));
    let depth = r.random_range(1..=6);
    let widths = random_widths(r, depth, 48);
    let (mut h, mut w) = (input.1, input.2);
    let mut layers = Vec::new();
    for &(a, b) in &widths {
        let size = r.random_range(1..=5.min(h).min(w));
        let pad = r.random_range(0..=size / 2);
        let stride = r.random_range(1..=2);
        layers.push(SplitLayerSpec::conv(size, pad, stride, a, b));
        h = window_out(h, size, pad, stride).unwrap();
        w = window_out(w, size, pad, stride).unwrap();
        if r.random_bool(0.6) {
            layers.push(SplitLayerSpec::relu());
        }
        if h >= 2 && w >= 2 && r.random_bool(0.3) {
            layers.push(SplitLayerSpec::pool(2, 2));
            h /= 2;
            w /= 2;
        }
    }
    (ArchSpec::new(layers, Variant::Sharing).unwrap(), input)
}
