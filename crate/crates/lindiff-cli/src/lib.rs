//! Command-line experiment runner for `lindiff`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod experiment;
pub mod validate;

pub use config::{ExperimentConfig, Format, RawConfig};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, Manifest, Setup};
