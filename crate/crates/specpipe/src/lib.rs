//! File formats and command implementations for the `specpipe` tool.
//!
//! The model itself lives in `specpipe-core`; this crate reads run
//! configurations and measurement tables, writes traces and reports, and
//! backs the command-line interface.

pub mod commands;
pub mod config;
pub mod observations;
pub mod report;
pub mod trace;

pub use commands::CliError;
pub use config::RunConfig;
