//! `vidgen` experiment driver.

pub mod adapt;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod toy2d;
pub mod video;

pub use error::{CliError, Result};
