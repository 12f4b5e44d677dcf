//! Experiment harness: scenario files, seeded sweeps over the optimization
//! schemes, and CSV/Markdown reports.

pub mod config;
pub mod error;
pub mod report;
pub mod sweep;

pub use error::{BenchError, Result};
