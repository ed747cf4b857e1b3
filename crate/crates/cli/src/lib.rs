//! The `twotower` command line: argument definitions, config resolution,
//! run manifests and the subcommands themselves.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::run;
pub use error::{CliError, CliResult};
