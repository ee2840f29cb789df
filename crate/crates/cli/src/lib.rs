//! Experiment harness around `compams-core`: the synchronous multi-worker
//! training loop, run configuration files, and CSV/JSON artifact output.

pub mod config;
pub mod metrics;
pub mod simulator;

pub use compams_core as core;
