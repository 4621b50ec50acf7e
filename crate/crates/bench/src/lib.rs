//! Experiment runner: generates or loads instances, runs RSSM and RSM over a
//! grid of block counts and seeds, and writes CSV traces plus a JSON manifest.

pub mod config;
pub mod error;
pub mod grid;
pub mod selftest;
pub mod trace_io;

pub use config::{ExperimentConfig, InstanceSource, ProblemSpec, ScheduleSpec};
pub use error::{BenchError, Result};
pub use grid::{run_grid, CellOutcome, GridOutcome};
pub use selftest::run_selftest;
pub use trace_io::{emit_csv, read_csv};
