//! Experiment plumbing: configuration files, checkpoints, CSV reports, the
//! benchmark and DAgger suites, and the verification checks.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod run;
pub mod verify;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointFile, EnvCheck, FORMAT_VERSION};
pub use config::ExperimentConfig;
pub use report::{emit_learning_curve, running_mean, BENCHMARK_HEADER, CURVE_HEADER, DAGGER_HEADER};
pub use run::{evaluate_checkpoint, load_expert, run_benchmark, run_dagger_suite, run_train};
pub use verify::{run_verify, CheckOutcome};
