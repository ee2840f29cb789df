//! Per-worker state: the error-feedback accumulator and the
//! compress-with-error-feedback local step.
//!
//! Each round a worker draws a stochastic gradient `g` at the broadcast
//! iterate, transmits `sent = C(g + e)` and keeps the residual
//! `e <- (g + e) - sent`. Only `sent` ever crosses the wire; the
//! accumulator makes compression errors telescope so that, cumulatively,
//! everything the worker computed is eventually applied.

use crate::compressor::{compress, CompressorSpec};
use crate::error::CoreError;
use crate::numerics::{ParamVector, RngStream};
use crate::objectives::{Shard, StochasticObjective};
use crate::streams;

/// Norms captured before the step mutates the accumulator, so metrics
/// reflect the state the step actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// `||g||^2` of the freshly drawn stochastic gradient.
    pub grad_norm_sq: f64,
    /// `||e||^2` of the accumulator entering the step.
    pub error_norm_sq: f64,
}

/// One worker: id, error accumulator, private RNG stream, data shard.
#[derive(Debug, Clone)]
pub struct WorkerState {
    id: usize,
    error: ParamVector,
    rng: RngStream,
    shard: Shard,
    batch: usize,
    // Running sums of raw and transmitted gradients; together with the
    // accumulator they witness the telescoped conservation identity
    // sum(sent) + e == sum(g).
    cum_grad: ParamVector,
    cum_sent: ParamVector,
}

impl WorkerState {
    /// Fresh worker with a zero accumulator. The RNG stream is derived
    /// from the run seed and the worker index, so draw sequences do not
    /// depend on scheduling.
    pub fn new(id: usize, dim: usize, seed: u64, shard: Shard, batch: usize) -> Self {
        Self {
            id,
            error: ParamVector::zeros(dim),
            rng: RngStream::new(seed, streams::WORKER_BASE + id as u64),
            shard,
            batch,
            cum_grad: ParamVector::zeros(dim),
            cum_sent: ParamVector::zeros(dim),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn error(&self) -> &ParamVector {
        &self.error
    }

    pub fn error_norm_sq(&self) -> f64 {
        self.error.norm2_sq()
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    /// Swaps in a new shard (epoch reshuffles).
    pub fn set_shard(&mut self, shard: Shard) {
        self.shard = shard;
    }

    /// Draws a gradient at `theta`, compresses it with error feedback and
    /// returns the transmitted vector plus pre-step diagnostics.
    pub fn local_step(
        &mut self,
        objective: &StochasticObjective,
        theta: &ParamVector,
        spec: &CompressorSpec,
    ) -> Result<(ParamVector, StepDiagnostics), CoreError> {
        let g = objective.stochastic_gradient(&self.shard, theta, &mut self.rng, self.batch)?;
        g.validate_finite("worker gradient")?;
        let diagnostics = StepDiagnostics {
            grad_norm_sq: g.norm2_sq(),
            error_norm_sq: self.error.norm2_sq(),
        };
        let corrected = g.add(&self.error)?;
        let sent = compress(spec, &corrected)?;
        self.error = corrected.sub(&sent)?;
        self.cum_grad.add_assign(&g);
        self.cum_sent.add_assign(&sent);
        Ok((sent, diagnostics))
    }

    /// Discards the accumulator after a step. Running with this after
    /// every step is the "no error feedback" ablation; it also voids the
    /// conservation identity, so the residual sums reset too.
    pub fn discard_error(&mut self) {
        self.error.set_zero();
        self.cum_grad.set_zero();
        self.cum_sent.set_zero();
    }

    /// Relative norm of `sum(sent) + e - sum(g)`; stays at rounding level
    /// under error feedback no matter how many rounds telescope.
    pub fn conservation_residual(&self) -> f64 {
        let mut drift = 0.0;
        let mut scale = 0.0;
        for ((s, e), g) in self
            .cum_sent
            .as_slice()
            .iter()
            .zip(self.error.as_slice())
            .zip(self.cum_grad.as_slice())
        {
            let r = s + e - g;
            drift += r * r;
            scale += g * g;
        }
        crate::math::sqrt(drift) / crate::math::sqrt(scale).max(1.0)
    }

    /// Zeroes the accumulator and ledger and rewinds the RNG stream, so a
    /// rerun reproduces the original run exactly.
    pub fn reset(&mut self) {
        self.error.set_zero();
        self.cum_grad.set_zero();
        self.cum_sent.set_zero();
        self.rng.restart();
    }
}

/// Worst-case squared norm of the error accumulator for a q-deviate
/// compressor when every stochastic gradient satisfies `||g|| <= g_bound`:
/// `4 q^2 / (1 - q^2)^2 * g_bound^2`.
pub fn error_accumulator_bound(q_sq: f64, g_bound: f64) -> f64 {
    assert!((0.0..1.0).contains(&q_sq));
    let denom = 1.0 - q_sq;
    4.0 * q_sq / (denom * denom) * g_bound * g_bound
}
