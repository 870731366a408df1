//! Early-rejection thresholds and S1 class grouping.
//!
//! Thresholds are read off per-class ROC curves of S1 scores so that each
//! class of interest keeps a fixed true positive rate. For many-class
//! problems the S2 classes are first grouped into a few S1 classes by
//! k-means over class-averaged activations.

mod kmeans;
mod roc;
mod threshold;

pub use kmeans::{cluster_classes, kmeans, ClassPartition, KMeansConfig, KMeansResult};
pub use roc::{pick_threshold, roc_curve, RocPoint};
pub use threshold::{pass_mask, ThresholdEntry, ThresholdSet};
