//! Experiment driver for the search-trace study: configuration, file formats,
//! run directories, and one function per command.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod run;
pub mod star;

pub use error::{LabError, Result};
