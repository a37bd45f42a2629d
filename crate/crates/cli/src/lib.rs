//! Command-line front-end: configuration, subcommands and machine-readable records.

// `!(x > 0)` also rejects NaN, which is the intent wherever it appears.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod record;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
