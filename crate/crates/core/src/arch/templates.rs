//! Built-in architectures.
//!
//! `shorthand` is the parametric-layer shorthand exactly as the baselines and
//! their cascades are usually quoted; `full` adds the strides, padding,
//! pooling and ReLU placement of the original networks so that spatial sizes
//! can be propagated. Both forms parse.

use super::{parse_arch, ArchSpec};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct ArchTemplate {
    pub name: &'static str,
    pub shorthand: &'static str,
    pub full: &'static str,
    /// `(channels, height, width)` of the network input.
    pub input: (usize, usize, usize),
}

impl ArchTemplate {
    pub fn parse_row(&self) -> Result<ArchSpec> {
        parse_arch(self.shorthand)
    }

    pub fn parse_full(&self) -> Result<ArchSpec> {
        parse_arch(self.full)
    }
}

const PATCH_INPUT: (usize, usize, usize) = (2, 64, 64);
const DETECT_INPUT: (usize, usize, usize) = (3, 227, 227);
const RETRIEVAL_INPUT: (usize, usize, usize) = (3, 224, 224);

/// Patch comparison, detection and retrieval baselines and their cascades.
pub const BASELINES: &[ArchTemplate] = &[
    ArchTemplate {
        name: "P_M",
        shorthand: "C4(96), 3×C3(96), 3×C3(192), C2(1)",
        full: "C4(96)s3, R, 3x[C3(96)p1, R], P2, 3x[C3(192), R], P2, C2(1)",
        input: PATCH_INPUT,
    },
    ArchTemplate {
        name: "P",
        shorthand: "C4(32/64), 3×C3(32/64), 3×C3(64/128), C2(2/1)",
        full: "C4(32/64)s3, R, 3x[C3(32/64)p1, R], P2, 3x[C3(64/128), R], P2, C2(2/1)",
        input: PATCH_INPUT,
    },
    ArchTemplate {
        name: "D_M",
        shorthand: "C11(96), C5(256), 2×C3(384), C3(256), C6(4096), C1(4096), C1(21)",
        full: "C11(96)s4, R, P3s2, C5(256)p2, R, P3s2, 2x[C3(384)p1, R], C3(256)p1, R, P3s2, \
               C6(4096), R, C1(4096), R, C1(21)",
        input: DETECT_INPUT,
    },
    ArchTemplate {
        name: "D",
        shorthand: "C11(96), C5(256), 2×C3(384), C3(256), C6(512/3584), C1(512/3584), C1(2/21)",
        full: "C11(96)s4, R, P3s2, C5(256)p2, R, P3s2, 2x[C3(384)p1, R], C3(256)p1, R, P3s2, \
               C6(512/3584), R, C1(512/3584), R, C1(2/21)",
        input: DETECT_INPUT,
    },
    R_M,
    R_W1,
];

const R_M: ArchTemplate = ArchTemplate {
    name: "R_M",
    shorthand: "C11(64), C5(256), 3×C3(256), C6(4096), C1(4096), C1(4096)",
    full: "C11(64)s4, R, P2, C5(256)p2, R, P2, 3x[C3(256)p1, R], P2, C6(4096), R, C1(4096), R, \
           C1(4096)",
    input: RETRIEVAL_INPUT,
};

const R_W1: ArchTemplate = ArchTemplate {
    name: "R",
    shorthand: "C11(8/56), C5(32/224), 3×C3(32/224), C6(256/3840), C1(256/3840), C1(7/1000)",
    full: "C11(8/56)s4, R, P2, C5(32/224)p2, R, P2, 3x[C3(32/224)p1, R], P2, C6(256/3840), R, \
           C1(256/3840), R, C1(7/1000)",
    input: RETRIEVAL_INPUT,
};

/// Width and depth variations of the retrieval cascade.
pub const RETRIEVAL_VARIANTS: &[ArchTemplate] = &[
    R_M,
    ArchTemplate {
        name: "R_W3",
        shorthand: "C11(32/32), C5(128/128), 3×C3(128/128), C6(1024/3072), C1(1024/3072), C1(7/1000)",
        full: "C11(32/32)s4, R, P2, C5(128/128)p2, R, P2, 3x[C3(128/128)p1, R], P2, \
               C6(1024/3072), R, C1(1024/3072), R, C1(7/1000)",
        input: RETRIEVAL_INPUT,
    },
    ArchTemplate {
        name: "R_W2",
        shorthand: "C11(16/48), C5(64/192), 3×C3(64/192), C6(512/3584), C1(512/3584), C1(7/1000)",
        full: "C11(16/48)s4, R, P2, C5(64/192)p2, R, P2, 3x[C3(64/192)p1, R], P2, \
               C6(512/3584), R, C1(512/3584), R, C1(7/1000)",
        input: RETRIEVAL_INPUT,
    },
    ArchTemplate {
        name: "R_W1",
        ..R_W1
    },
    ArchTemplate {
        name: "R_D2",
        shorthand: "C11(64/-), C5(256/-), 3×C3(256/-), C6(7/4096), C1(-/4096), C1(-/1000)",
        full: "C11(64/-)s4, R, P2, C5(256/-)p2, R, P2, 3x[C3(256/-)p1, R], P2, C6(7/4096), R, \
               C1(-/4096), R, C1(-/1000)",
        input: RETRIEVAL_INPUT,
    },
    ArchTemplate {
        name: "R_D1",
        shorthand: "C11(64/-), C5(256/-), C3(256/-), C3(7/256), C3(-/256), C6(-/4096), C1(-/4096), \
                    C1(-/1000)",
        full: "C11(64/-)s4, R, P2, C5(256/-)p2, R, P2, C3(256/-)p1, R, C3(7/256)p1, R, \
               C3(-/256)p1, R, P2, C6(-/4096), R, C1(-/4096), R, C1(-/1000)",
        input: RETRIEVAL_INPUT,
    },
];

pub fn find(name: &str) -> Option<&'static ArchTemplate> {
    BASELINES
        .iter()
        .chain(RETRIEVAL_VARIANTS)
        .find(|t| t.name.eq_ignore_ascii_case(name))
}

/// ResNet-34 (basic blocks) with `s1_num / s1_den` of every conv's channels
/// allocated to S1 and both stages of full depth. Average pooling is
/// approximated by max pooling, which the cost model does not charge for.
pub fn resnet34_cascade(s1_num: usize, s1_den: usize, s1_classes: usize) -> Result<ArchSpec> {
    let split = |n: usize| {
        let a = n * s1_num / s1_den;
        format!("{a}/{}", n - a)
    };
    let mut tokens = vec![format!("C7({})s2p3", split(64)), "R".into(), "P3s2".into()];
    for (i, (blocks, width)) in [(3, 64), (4, 128), (6, 256), (3, 512)].into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if i > 0 && b == 0 { "s2" } else { "" };
            tokens.push(format!("B3({}){stride}", split(width)));
            tokens.push("R".into());
        }
    }
    tokens.push("P7".into());
    tokens.push(format!("C1({s1_classes}/1000)"));
    parse_arch(&tokens.join(", "))
}

pub const RESNET_INPUT: (usize, usize, usize) = RETRIEVAL_INPUT;
