//! Two-stage feature-sharing CNN cascades.
//!
//! The second stage (S2) of a cascade reads the intermediate feature maps of
//! the first stage (S1) as extra input channels, so work done for the cheap
//! early-rejection classifier is never repeated for the examples that pass
//! it. The crate covers the whole pipeline:
//!
//! * [`nn`]: dense kernels with forward and backward passes,
//! * [`arch`]: the textual stage-pair notation,
//! * [`cascade`]: model construction, joint training and cascaded inference,
//! * [`calibration`]: ROC thresholds and class grouping,
//! * [`sparse`]: minimal-move batch compaction,
//! * [`cost`]: analytic multiply-accumulate and parameter accounting,
//! * [`bench`]: synthetic data and wall-clock sweeps.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! working precision.

pub mod arch;
pub mod bench;
pub mod calibration;
pub mod cascade;
pub mod cost;
mod error;
pub mod nn;
pub mod scalar;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type CascadeModel32 = cascade::CascadeModel<f32>;
pub type CascadeModel64 = cascade::CascadeModel<f64>;
pub type ThresholdSet32 = calibration::ThresholdSet<f32>;
