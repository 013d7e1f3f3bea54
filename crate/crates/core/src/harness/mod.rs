//! Training runs, sweeps, and their on-disk form.

pub mod config;
pub mod io;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{ExperimentConfig, ModelConfig, OptimizerKind, ParityConfig, Task, WdConvention};
pub use io::{gap_regression_dataset, read_records, read_run, read_sweep, write_records, write_sweep};
pub use report::{analyze_dir, write_report, Analysis};
pub use run::{run_training, RunRecord, SpectralCheckpoint, TrajectoryPoint};
pub use sweep::{apply_axis, run_sweep, SweepAxis, SweepPoint, SweepResult, SweepSpec};
