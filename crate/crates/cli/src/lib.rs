//! Command-line driver: `tfa train | enhance | evaluate | ablate | gradcheck`.

pub mod commands;
pub mod config;
pub mod error;
pub mod gradcheck;

pub use commands::run;
pub use error::{CliError, CliResult};
