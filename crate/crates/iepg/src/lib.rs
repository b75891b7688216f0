//! File formats, dataset storage, run configuration, ablation driver and
//! command implementations on top of `iepg-core`.

pub mod ablation;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod images;

pub use crate::error::{CliError, CliResult};
