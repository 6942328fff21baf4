//! Experiment harness: configuration, sweeps over width, sparsity, replay
//! ratio and intervention, offline dataset recording, aggregate statistics
//! and report emission.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod registry;
pub mod report;
pub mod stats;
pub mod sweep;

pub use config::{Cell, ExperimentConfig};
pub use error::{HarnessError, Result};
