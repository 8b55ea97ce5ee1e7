//! Configuration, file formats and subcommands of the `gdb` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::RunConfig;
pub use error::CliError;
