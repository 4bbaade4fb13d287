//! Deterministic edge-versus-cloud driving pipeline: weather-degraded
//! sensing, Kalman fusion, a small neural perception stack and DQN control,
//! benchmarked under injected compute and network latency.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod nn;
pub mod perception;
pub mod rl;
pub mod rng;
pub mod sensors;
pub mod sim;

pub use error::{Error, Result};
