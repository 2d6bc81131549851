//! Numeric deviation lab for attention kernels.
//!
//! Re-implements baseline and tiled (flash) attention on top of software-emulated
//! floating-point formats, measures how far their outputs drift from each other
//! and from an FP64 golden value, and compares weight trajectories of paired toy
//! training runs.

pub mod attention;
pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod numerics;
pub mod report;
pub mod sweeps;
pub mod trainer;
pub mod validate;

pub use attention::{
    baseline_attention, default_block_geometry, flash_attention, perturb_geometry,
    AttentionConfig, BlockGeometry, Perturbation, Variant,
};
pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use error::{Error, Result};
pub use linalg::{matmul, random_matrix, softmax_rows, Matrix};
pub use metrics::{diff_stats, golden_deviation, max_difference, wasserstein_1d, DeviationReport};
pub use numerics::{quantize, rounded_op, ulp, Arithmetic, FloatFormat, Op};
pub use sweeps::{run_block_sweep, run_precision_sweep, run_seqlen_sweep, SweepResult, SweepSpec};
pub use trainer::{compare_runs, run_scenario_suite, train_run, CheckpointDelta, TrainRun, TrainRunConfig};
