//! Command-line front end for the `epilogue` toolkit.

pub mod commands;
pub mod error;
pub mod histogram;
pub mod pipeline;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
