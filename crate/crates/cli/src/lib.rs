//! File formats, configuration and the command-line workflow for
//! stratified hybrid risk-limiting audits.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod sim;
pub mod workflow;

pub use error::{CliError, Result};
