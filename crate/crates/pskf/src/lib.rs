//! Experiment runner for power-scheduled sequential Kalman filtering.
//!
//! Reads JSON experiment configs, runs Monte Carlo simulations on all cores,
//! and writes CSV/JSON summaries. The numerics live in [`pskf_core`].

pub mod cli;
pub mod config;
pub mod output;
pub mod parallel;
pub mod report;

pub use pskf_core;
