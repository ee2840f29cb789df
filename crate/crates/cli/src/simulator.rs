//! Synchronous distributed training loop over `n` virtual workers, with
//! closed-form communication accounting and metrics capture.
//!
//! Each round: every worker draws a stochastic gradient at the broadcast
//! iterate and transmits its compressed, error-corrected gradient; the
//! server averages the transmissions in worker order and applies one
//! AMSGrad (or SGD) step. Rounds are fully synchronous. Worker gradient
//! computation may run on several threads, but outputs are merged in
//! worker order, so results are independent of the thread count.
//!
//! All numeric outputs are deterministic given the seed. Wall-clock time
//! is returned out of band in [`RunOutput::elapsed`] rather than inside
//! the per-round records, which keeps emitted artifacts byte-reproducible;
//! the `wall_ns` metrics column is reserved and always zero.

use std::time::Instant;

use compams_core::compressor::{self, AccountingMode, CompressorSpec};
use compams_core::numerics::{gaussian_vector, ParamVector, RngStream};
use compams_core::objectives::{PartitionMode, PartitionPlan, Shard, StochasticObjective};
use compams_core::server::{AmsHyper, LearningRateSchedule, ServerState};
use compams_core::worker::{error_accumulator_bound, StepDiagnostics, WorkerState};
use compams_core::{streams, CoreError};
use thiserror::Error;

/// Server-side update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    AmsGrad,
    Sgd,
}

/// Starting iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaInit {
    Zeros,
    Constant(f64),
    /// Seeded Gaussian init (needed for MLPs, where a constant start is a
    /// saddle by symmetry).
    Gaussian { std: f64 },
}

/// Full description of one simulated run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub iters: u64,
    pub batch: usize,
    pub seed: u64,
    pub compressor: CompressorSpec,
    pub optimizer: OptimizerKind,
    pub hyper: AmsHyper,
    pub schedule: LearningRateSchedule,
    pub objective: StochasticObjective,
    pub partition_mode: PartitionMode,
    pub accounting: AccountingMode,
    /// Record metrics every this many rounds (the final round is always
    /// recorded). Must be >= 1.
    pub record_every: u64,
    /// Steps per epoch; 0 resolves to `ceil(samples / (n * batch))` for
    /// sample-based objectives and to the whole run for quadratics.
    pub steps_per_epoch: u64,
    /// Disable to zero the error accumulator after every step (the
    /// no-error-feedback ablation arm).
    pub error_feedback: bool,
    /// Worker-evaluation threads; 0 picks min(n, available cores).
    pub threads: usize,
    pub theta0: ThetaInit,
    /// Keep the iterate after every round in [`RunOutput::thetas`].
    pub record_theta: bool,
}

impl SimConfig {
    /// Baseline configuration: single worker, identity compression,
    /// AMSGrad with default hyperparameters.
    pub fn new(objective: StochasticObjective, iters: u64, eta: f64, seed: u64) -> Self {
        Self {
            n: 1,
            iters,
            batch: 1,
            seed,
            compressor: CompressorSpec::Identity,
            optimizer: OptimizerKind::AmsGrad,
            hyper: AmsHyper::default(),
            schedule: LearningRateSchedule::Constant { eta },
            objective,
            partition_mode: PartitionMode::IidShuffle,
            accounting: AccountingMode::ValuesPlusIndices,
            record_every: 1,
            steps_per_epoch: 0,
            error_feedback: true,
            threads: 1,
            theta0: ThetaInit::Zeros,
            record_theta: false,
        }
    }
}

/// One recorded round. `loss` and `grad_norm_sq` evaluate the true global
/// objective (full per-worker gradients), not minibatch estimates; bit
/// counters are cumulative over the run so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub t: u64,
    pub epoch: u64,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub bits_uplink_total: u64,
    pub bits_downlink_total: u64,
    pub lr: f64,
    pub max_error_norm_sq: f64,
    /// Reserved; always zero. Timing lives in [`RunOutput::elapsed`] so
    /// that emitted metrics stay byte-identical across reruns.
    pub wall_ns: u64,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub server: ServerState,
    pub metrics: Vec<RoundMetrics>,
    /// Iterate after every round (only when `record_theta` is set).
    pub thetas: Vec<ParamVector>,
    /// Largest per-worker conservation residual seen at recorded rounds.
    pub max_conservation_residual: f64,
    /// Real wall-clock duration of the loop.
    pub elapsed: std::time::Duration,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("round {round}, worker {worker}: {source}")]
    Worker {
        round: u64,
        worker: usize,
        source: CoreError,
    },
    #[error("round {round}: {source}")]
    Server { round: u64, source: CoreError },
    #[error("round {round}: non-finite {what}")]
    NonFinite { round: u64, what: &'static str },
    #[error("round {round}: invariant violated: {what}")]
    Invariant { round: u64, what: String },
}

impl SimError {
    /// Round index the failure occurred at, when the run had started.
    pub fn round(&self) -> Option<u64> {
        match self {
            SimError::Config(_) => None,
            SimError::Worker { round, .. }
            | SimError::Server { round, .. }
            | SimError::NonFinite { round, .. }
            | SimError::Invariant { round, .. } => Some(*round),
        }
    }
}

fn validate(cfg: &SimConfig) -> Result<(), SimError> {
    let bad = |msg: String| Err(SimError::Config(msg));
    if cfg.n == 0 {
        return bad("worker count must be >= 1".into());
    }
    if cfg.batch == 0 {
        return bad("batch size must be >= 1".into());
    }
    if cfg.record_every == 0 {
        return bad("record_every must be >= 1".into());
    }
    let d = cfg.objective.dim();
    cfg.compressor.validate(d).map_err(|e| SimError::Config(e.to_string()))?;
    cfg.hyper.validate().map_err(|e| SimError::Config(e.to_string()))?;
    cfg.schedule.validate().map_err(|e| SimError::Config(e.to_string()))?;
    if let Some(samples) = cfg.objective.n_samples() {
        if cfg.n > samples {
            return bad(format!("{} workers cannot share {samples} samples", cfg.n));
        }
        let min_shard = samples / cfg.n;
        if cfg.batch > min_shard {
            return bad(format!(
                "batch {} exceeds the smallest shard ({min_shard} samples)",
                cfg.batch
            ));
        }
    }
    Ok(())
}

fn resolve_steps_per_epoch(cfg: &SimConfig) -> u64 {
    if cfg.steps_per_epoch > 0 {
        return cfg.steps_per_epoch;
    }
    match cfg.objective.n_samples() {
        Some(samples) => {
            let per_round = (cfg.n * cfg.batch) as u64;
            (samples as u64).div_ceil(per_round).max(1)
        }
        None => cfg.iters.max(1),
    }
}

fn epoch_of(t: u64, steps_per_epoch: u64) -> u64 {
    (t - 1) / steps_per_epoch + 1
}

fn initial_theta(cfg: &SimConfig) -> ParamVector {
    let d = cfg.objective.dim();
    match cfg.theta0 {
        ThetaInit::Zeros => ParamVector::zeros(d),
        ThetaInit::Constant(c) => ParamVector::constant(d, c),
        ThetaInit::Gaussian { std } => {
            let mut rng = RngStream::new(cfg.seed, streams::THETA_INIT);
            gaussian_vector(&mut rng, d, std)
        }
    }
}

fn effective_threads(requested: usize, n: usize) -> usize {
    let auto = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let threads = if requested == 0 { auto } else { requested };
    threads.clamp(1, n.max(1))
}

type WorkerRound = (ParamVector, StepDiagnostics);

fn step_workers(
    workers: &mut [WorkerState],
    objective: &StochasticObjective,
    theta: &ParamVector,
    spec: &CompressorSpec,
    threads: usize,
) -> Result<Vec<WorkerRound>, (usize, CoreError)> {
    let n = workers.len();
    if threads <= 1 || n <= 1 {
        let mut out = Vec::with_capacity(n);
        for worker in workers.iter_mut() {
            match worker.local_step(objective, theta, spec) {
                Ok(round) => out.push(round),
                Err(e) => return Err((worker.id(), e)),
            }
        }
        return Ok(out);
    }
    let chunk = n.div_ceil(threads);
    let mut slots: Vec<Option<Result<WorkerRound, CoreError>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (worker_chunk, slot_chunk) in
            workers.chunks_mut(chunk).zip(slots.chunks_mut(chunk))
        {
            scope.spawn(move || {
                for (worker, slot) in worker_chunk.iter_mut().zip(slot_chunk.iter_mut()) {
                    *slot = Some(worker.local_step(objective, theta, spec));
                }
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for (i, slot) in slots.into_iter().enumerate() {
        match slot.expect("every worker ran") {
            Ok(round) => out.push(round),
            Err(e) => return Err((i, e)),
        }
    }
    Ok(out)
}

/// Executes the full synchronous loop. Deterministic given `cfg.seed`:
/// repeated calls produce identical metrics regardless of `cfg.threads`.
pub fn run(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    validate(cfg)?;
    let started = Instant::now();
    let d = cfg.objective.dim();
    let n = cfg.n;

    let mut objective = cfg.objective.clone();
    let plan = PartitionPlan { mode: cfg.partition_mode, n, seed: cfg.seed };
    let mut shards =
        objective.make_partition(&plan).map_err(|e| SimError::Config(e.to_string()))?;

    // sqrt-scaled schedules always follow the actual worker count
    let schedule = match cfg.schedule.clone() {
        LearningRateSchedule::SqrtScaled { c, .. } => LearningRateSchedule::SqrtScaled { c, n },
        other => other,
    };

    let mut server = ServerState::new(initial_theta(cfg), cfg.hyper, schedule.clone())
        .map_err(|e| SimError::Config(e.to_string()))?;
    let mut workers: Vec<WorkerState> = (0..n)
        .map(|i| WorkerState::new(i, d, cfg.seed, shards[i].clone(), cfg.batch))
        .collect();
    let mut epoch_rng = RngStream::new(cfg.seed, streams::EPOCH_SHUFFLE);

    let steps_per_epoch = resolve_steps_per_epoch(cfg);
    let threads = effective_threads(cfg.threads, n);
    let uplink_per_round = n as u64 * compressor::encoded_bits(&cfg.compressor, d, cfg.accounting);
    let downlink_per_round = n as u64 * 32 * d as u64;

    // error-accumulator bound check, active only while the declared
    // gradient bound is valid (noiseless objective, iterates inside the
    // trust region)
    let accumulator_cap = if cfg.error_feedback {
        cfg.objective.gradient_bound().map(|g| {
            let q_sq = compressor::deviation(&cfg.compressor, d)
                .map(|q| q.q_sq())
                .unwrap_or(0.0);
            error_accumulator_bound(q_sq, g)
        })
    } else {
        None
    };
    let mut bound_valid = true;

    let mut metrics = Vec::new();
    let mut thetas = Vec::new();
    let mut prev_vhat: Option<ParamVector> = None;
    let mut max_resid = 0.0f64;

    let record = |t: u64,
                  epoch: u64,
                  bits_up: u64,
                  bits_down: u64,
                  max_err: f64,
                  objective: &StochasticObjective,
                  shards: &[Shard],
                  server: &ServerState|
     -> RoundMetrics {
        RoundMetrics {
            t,
            epoch,
            loss: objective.global_loss(shards, server.theta()),
            grad_norm_sq: objective.global_grad_norm_sq(shards, server.theta()),
            bits_uplink_total: bits_up,
            bits_downlink_total: bits_down,
            lr: schedule.lr_at(t.max(1), epoch.max(1)),
            max_error_norm_sq: max_err,
            wall_ns: 0,
        }
    };

    metrics.push(record(0, 0, 0, 0, 0.0, &objective, &shards, &server));

    let mut bits_up = 0u64;
    let mut bits_down = 0u64;

    for t in 1..=cfg.iters {
        let epoch = epoch_of(t, steps_per_epoch);
        if t > 1 && (t - 1) % steps_per_epoch == 0 {
            if let Some(fresh) = objective.reshuffle(&plan, &mut epoch_rng) {
                for (worker, shard) in workers.iter_mut().zip(&fresh) {
                    worker.set_shard(shard.clone());
                }
                shards = fresh;
            }
        }

        if accumulator_cap.is_some() && bound_valid {
            bound_valid = objective.in_trust_region(server.theta());
        }

        let rounds = step_workers(&mut workers, &objective, server.theta(), &cfg.compressor, threads)
            .map_err(|(worker, source)| SimError::Worker { round: t, worker, source })?;
        if !cfg.error_feedback {
            for worker in &mut workers {
                worker.discard_error();
            }
        }

        let sent: Vec<ParamVector> = rounds.iter().map(|(s, _)| s.clone()).collect();
        let g_bar = ServerState::aggregate(&sent, n)
            .map_err(|source| SimError::Server { round: t, source })?;
        match cfg.optimizer {
            OptimizerKind::AmsGrad => server.amsgrad_step(&g_bar, epoch),
            OptimizerKind::Sgd => server.sgd_step(&g_bar, epoch),
        }
        .map_err(|source| SimError::Server { round: t, source })?;
        server
            .theta()
            .validate_finite("iterate")
            .map_err(|_| SimError::NonFinite { round: t, what: "iterate" })?;

        bits_up += uplink_per_round;
        bits_down += downlink_per_round;
        if cfg.record_theta {
            thetas.push(server.theta().clone());
        }

        if t % cfg.record_every == 0 || t == cfg.iters {
            let max_err = rounds
                .iter()
                .map(|(_, diag)| diag.error_norm_sq)
                .fold(0.0, f64::max);

            if cfg.error_feedback {
                for worker in &workers {
                    let resid = worker.conservation_residual();
                    max_resid = max_resid.max(resid);
                    if resid > 1e-9 {
                        return Err(SimError::Invariant {
                            round: t,
                            what: format!(
                                "worker {} conservation residual {resid:e}",
                                worker.id()
                            ),
                        });
                    }
                }
            }

            if let (Some(cap), true) = (accumulator_cap, bound_valid) {
                if max_err > cap * (1.0 + 1e-6) {
                    return Err(SimError::Invariant {
                        round: t,
                        what: format!("error accumulator {max_err:e} above bound {cap:e}"),
                    });
                }
            }

            if cfg.optimizer == OptimizerKind::AmsGrad {
                if let Some(prev) = &prev_vhat {
                    let monotone = server
                        .max_second_moment()
                        .as_slice()
                        .iter()
                        .zip(prev.as_slice())
                        .all(|(now, before)| now >= before);
                    if !monotone {
                        return Err(SimError::Invariant {
                            round: t,
                            what: "max second moment decreased".into(),
                        });
                    }
                }
                prev_vhat = Some(server.max_second_moment().clone());
            }

            metrics.push(record(t, epoch, bits_up, bits_down, max_err, &objective, &shards, &server));
        }
    }

    Ok(RunOutput {
        server,
        metrics,
        thetas,
        max_conservation_residual: max_resid,
        elapsed: started.elapsed(),
    })
}

/// Convergence target for worker-count sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepTarget {
    /// First round with `loss <= value`.
    Loss(f64),
    /// First round with `grad_norm_sq <= value`.
    GradNormSq(f64),
}

impl SweepTarget {
    fn hit(&self, m: &RoundMetrics) -> bool {
        match self {
            SweepTarget::Loss(v) => m.loss <= *v,
            SweepTarget::GradNormSq(v) => m.grad_norm_sq <= *v,
        }
    }
}

/// One row of a sweep result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub lr: f64,
    pub iterations_to_target: Option<u64>,
    pub bits_to_target: Option<u64>,
    pub reached: bool,
}

/// Runs `base` once per worker count and reports the first round hitting
/// the target. Sqrt-scaled schedules pick up each row's `n`; unreached
/// targets are recorded, not errors.
pub fn run_sweep(
    base: &SimConfig,
    n_values: &[usize],
    target: SweepTarget,
) -> Result<Vec<SweepRow>, SimError> {
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut cfg = base.clone();
        cfg.n = n;
        cfg.record_every = 1;
        let out = run(&cfg)?;
        let hit = out.metrics.iter().skip(1).find(|m| target.hit(m));
        rows.push(SweepRow {
            n,
            lr: out.metrics.first().map(|m| m.lr).unwrap_or(0.0),
            iterations_to_target: hit.map(|m| m.t),
            bits_to_target: hit.map(|m| m.bits_uplink_total),
            reached: hit.is_some(),
        });
    }
    Ok(rows)
}

/// Paired ablation: one run with error feedback, one where the error
/// accumulator is discarded after every step. Both arms share the seed,
/// so per-round gradient-noise draws coincide. Rejects the identity
/// compressor, which makes both arms trivially equal.
pub fn compare_ef(cfg: &SimConfig) -> Result<(RunOutput, RunOutput), SimError> {
    if cfg.compressor.is_identity() {
        return Err(SimError::Config(
            "error-feedback comparison needs a non-identity compressor".into(),
        ));
    }
    let mut with_ef = cfg.clone();
    with_ef.error_feedback = true;
    let mut without_ef = cfg.clone();
    without_ef.error_feedback = false;
    Ok((run(&with_ef)?, run(&without_ef)?))
}
