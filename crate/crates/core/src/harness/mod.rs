//! Experiment runner, file formats and the command-line front end.

pub mod cli;
pub mod experiment;
pub mod io;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport, ExperimentRow, RowStatus};
pub use io::Format;
