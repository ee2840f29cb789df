//! Building blocks for communication-efficient distributed adaptive
//! optimization: q-deviate gradient compressors (Top-k, block sign),
//! per-worker error feedback, a central AMSGrad/SGD server, and test
//! objectives with analytically known smoothness and variance constants.
//!
//! The crate is `no_std`-compatible (with `alloc`); IO, configuration and
//! the training-loop driver live in the companion `compams` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("compams-core needs either the `std` or the `libm` feature");

pub mod compressor;
pub mod error;
pub(crate) mod math;
pub mod numerics;
pub mod objectives;
pub mod server;
pub mod worker;

pub use compressor::{AccountingMode, CompressorSpec, DeviationFactor, Span};
pub use error::CoreError;
pub use numerics::{ParamVector, RngStream};
pub use objectives::{PartitionMode, PartitionPlan, Shard, StochasticObjective};
pub use server::{AmsHyper, LearningRateSchedule, ServerState};
pub use worker::{StepDiagnostics, WorkerState};




/// Reserved stream ids so that every consumer of randomness in a run draws
/// from its own substream of the master seed, independent of scheduling.
pub mod streams {
    /// Initial parameter vector.
    pub const THETA_INIT: u64 = 1;
    /// Synthetic dataset generation.
    pub const DATA_GEN: u64 = 2;
    /// Initial shard assignment.
    pub const PARTITION: u64 = 3;
    /// Per-epoch shard reshuffles.
    pub const EPOCH_SHUFFLE: u64 = 4;
    /// Worker `i` draws gradients from `WORKER_BASE + i`.
    pub const WORKER_BASE: u64 = 1000;
}
