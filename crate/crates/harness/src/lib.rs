//! Experiment orchestration: configuration, training campaigns and reports.

pub mod campaign;
pub mod config;
pub mod error;
pub mod report;

pub use error::{HarnessError, Result};
