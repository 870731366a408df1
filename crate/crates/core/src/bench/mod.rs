//! Synthetic data and the wall-clock sweep over pass fractions.

mod dataset;
mod groups;
mod sweep;

pub use dataset::{make_dataset, DatasetConfig, SyntheticDataset, Tier};
pub use groups::derive_s1_groups;
pub use sweep::{
    emit_csv, emit_mac_csv, forced_mask, host_description, sweep_p, timer_resolution_ns, BenchMeta, BenchPoint,
    BenchRun, SweepConfig, Timing, VariantModels,
};
