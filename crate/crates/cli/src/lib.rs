//! Command-line front end: TOML run configs, experiment runners and
//! reproducibility manifests.

pub mod config;
pub mod error;
pub mod run;

pub use error::CliError;
