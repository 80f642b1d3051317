//! Command-line orchestration for the `rpn3d` detector.

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use cli::Cli;
pub use commands::run;
pub use config::RunConfig;
pub use error::{CliError, Result};
