//! The two-stage model: construction, forward passes, joint training,
//! cascaded inference and checkpoints.
//!
//! S1 is a thin network that scores every example. S2 runs only on the
//! examples S1 lets through and, in the sharing variant, reads S1's feature
//! maps as extra input channels at every level where both exist.

mod checkpoint;
mod fit;
mod forward;
mod model;
mod train;

pub use fit::{fit, write_loss_csv, EpochLog, FitConfig};
pub use forward::{
    decide, ForwardTrace, InferOptions, InferOutput, InferStats, Prediction, S1Output, S2Scores,
};
pub use model::{CascadeModel, ConvParams};
pub use train::{Gradients, JointLossConfig, LossReport, S2LossKind};
