//! File formats, experiment configuration and the command implementations
//! behind the `lnms` binary. The algorithms live in [`lnms_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use error::{LnmsError, Result};
