//! Core of a small laboratory for gradual magnitude pruning in value-based
//! deep RL: masked networks, pruning schedules, replay, agents, environments
//! and the plasticity diagnostics used to compare dense and sparse agents.

pub mod agents;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod interventions;
pub mod net;
pub mod prune;
pub mod replay;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::Matrix;
