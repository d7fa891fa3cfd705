//! Command-line pipeline: teacher training, auxiliary transfer, student
//! distillation, evaluation and flow reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod gradsuite;

pub use args::Cli;
pub use error::{CliError, CliResult};
