//! File formats, run manifests and subcommands of the `pnc` tool.

pub mod angle;
pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;

pub use error::{CliError, Result};
