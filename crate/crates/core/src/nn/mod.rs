//! Minimal dense kernels with forward and backward passes for the layer
//! types a two-stage cascade needs.

pub mod conv;
pub mod counters;
pub mod layers;
pub mod loss;
pub mod sgd;

pub use conv::{conv_backward, conv_forward, ConvGrads};
pub use layers::{flatten, maxpool, maxpool_backward, relu, relu_backward, unflatten, PoolIndex};
pub use loss::{binary_hinge, cross_entropy, softmax_rows};
pub use sgd::{sgd_step, SgdConfig};

use serde::{Deserialize, Serialize};

/// Layer vocabulary understood by the architecture grammar and the cascade.
///
/// Fully connected layers are expressed as convolutions whose filter covers
/// the whole incoming map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { size: usize, pad: usize, stride: usize },
    Relu,
    MaxPool { window: usize, stride: usize },
    Flatten,
    /// Basic residual block (two `size × size` convolutions plus a 1×1
    /// projection shortcut when the shape changes). Cost accounting only.
    Residual { size: usize, stride: usize },
}

impl LayerKind {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Residual { .. })
    }
}

/// Output extent of a sliding window along one dimension, or `None` when the
/// window does not fit.
pub fn window_out(extent: usize, window: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if window == 0 || stride == 0 || padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}
