//! Desk-scale classification benchmark for comparing discretizations inside
//! a selective state-space classifier.

pub mod bench;
pub mod error;
pub mod model;
pub mod stats;
pub mod task;
pub mod train;

pub use error::{BenchError, Result};
