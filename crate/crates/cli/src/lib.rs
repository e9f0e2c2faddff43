//! Command-line front end: config resolution, subcommand dispatch and
//! artifact writing on top of the `robustkit` library.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::{main_with_args, Cli};
pub use error::{CliError, Result};
