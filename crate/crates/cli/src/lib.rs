//! The `reflow` command-line driver: dataset generation, training, sampling, evaluation,
//! integrator tables, verification reports and SVG plots.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
