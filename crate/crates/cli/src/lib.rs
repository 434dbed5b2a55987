//! Configuration files, presets, sweeps and reports around `lcqsim-core`.
//!
//! The `lcqsim` binary is a thin wrapper over [`cli::main_with_args`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
mod error;
pub mod format;
pub mod report;
pub mod sweep;

pub use config::{ConfigFile, Experiment, Overrides, SweepSpec};
pub use error::{CliError, Result};
