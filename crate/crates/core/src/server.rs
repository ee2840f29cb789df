//! Central-server optimizer state: AMSGrad on averaged gradients, plus a
//! plain-SGD baseline and learning-rate schedules.
//!
//! The AMSGrad update per coordinate is
//!
//! ```text
//! m     = beta1 * m + (1 - beta1) * g
//! v     = beta2 * v + (1 - beta2) * g^2
//! vhat  = max(vhat, v)
//! theta = theta - lr * m / sqrt(vhat + eps)
//! ```
//!
//! with `eps` inside the square root and no bias correction. `vhat` is
//! coordinatewise non-decreasing over the whole run. All moments live on
//! the server only; workers never hold moment estimates.

use alloc::format;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::numerics::ParamVector;

/// AMSGrad hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmsHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AmsHyper {
    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidSpec(format!(
                "need 0 <= beta1 < 1, 0 <= beta2 < 1, eps > 0; got beta1 = {}, beta2 = {}, eps = {}",
                self.beta1, self.beta2, self.eps
            )))
        }
    }
}

/// Step-size rule evaluated per iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum LearningRateSchedule {
    /// Fixed step size.
    Constant { eta: f64 },
    /// `eta = c * sqrt(n)` for `n` workers; the scaling that yields linear
    /// speedup in the worker count.
    SqrtScaled { c: f64, n: usize },
    /// `eta0` multiplied by `factor` after each completed milestone epoch.
    StepDecay { eta0: f64, milestones: Vec<u64>, factor: f64 },
}

impl LearningRateSchedule {
    /// Step size at iteration `t` (1-based) in epoch `epoch` (1-based).
    pub fn lr_at(&self, _t: u64, epoch: u64) -> f64 {
        match self {
            LearningRateSchedule::Constant { eta } => *eta,
            LearningRateSchedule::SqrtScaled { c, n } => c * math::sqrt(*n as f64),
            LearningRateSchedule::StepDecay { eta0, milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch > m).count();
                let mut eta = *eta0;
                for _ in 0..passed {
                    eta *= factor;
                }
                eta
            }
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let positive = match self {
            LearningRateSchedule::Constant { eta } => *eta > 0.0,
            LearningRateSchedule::SqrtScaled { c, n } => *c > 0.0 && *n >= 1,
            LearningRateSchedule::StepDecay { eta0, factor, .. } => *eta0 > 0.0 && *factor > 0.0,
        };
        if positive {
            Ok(())
        } else {
            Err(CoreError::InvalidSpec("step sizes must stay positive".into()))
        }
    }
}

/// Server-side optimizer state.
#[derive(Debug, Clone)]
pub struct ServerState {
    theta: ParamVector,
    m: ParamVector,
    v: ParamVector,
    v_hat: ParamVector,
    t: u64,
    hyper: AmsHyper,
    schedule: LearningRateSchedule,
}

impl ServerState {
    /// Fresh state with zero moments at the given starting point.
    pub fn new(
        theta0: ParamVector,
        hyper: AmsHyper,
        schedule: LearningRateSchedule,
    ) -> Result<Self, CoreError> {
        hyper.validate()?;
        schedule.validate()?;
        let d = theta0.dim();
        Ok(Self {
            theta: theta0,
            m: ParamVector::zeros(d),
            v: ParamVector::zeros(d),
            v_hat: ParamVector::zeros(d),
            t: 0,
            hyper,
            schedule,
        })
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn first_moment(&self) -> &ParamVector {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamVector {
        &self.v
    }

    pub fn max_second_moment(&self) -> &ParamVector {
        &self.v_hat
    }

    /// Completed iterations.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> &AmsHyper {
        &self.hyper
    }

    pub fn schedule(&self) -> &LearningRateSchedule {
        &self.schedule
    }

    /// Coordinatewise mean of the received gradients, accumulated in
    /// ascending worker order so the reduction is deterministic.
    pub fn aggregate(received: &[ParamVector], n: usize) -> Result<ParamVector, CoreError> {
        if received.is_empty() || n == 0 {
            return Err(CoreError::EmptyAggregate);
        }
        if received.len() != n {
            return Err(CoreError::InvalidSpec(format!(
                "expected {n} gradients, received {}",
                received.len()
            )));
        }
        let mut sum = received[0].clone();
        for g in &received[1..] {
            if g.dim() != sum.dim() {
                return Err(CoreError::DimMismatch { expected: sum.dim(), got: g.dim() });
            }
            sum.add_assign(g);
        }
        let inv = n as f64;
        for x in sum.as_mut_slice() {
            *x /= inv;
        }
        Ok(sum)
    }

    /// One AMSGrad step on the averaged gradient. Returns the new iterate.
    pub fn amsgrad_step(
        &mut self,
        g_bar: &ParamVector,
        epoch: u64,
    ) -> Result<&ParamVector, CoreError> {
        if g_bar.dim() != self.theta.dim() {
            return Err(CoreError::DimMismatch { expected: self.theta.dim(), got: g_bar.dim() });
        }
        let t_next = self.t + 1;
        let lr = self.schedule.lr_at(t_next, epoch);
        let AmsHyper { beta1, beta2, eps } = self.hyper;
        let gs = g_bar.as_slice();
        let (m, v) = (self.m.as_mut_slice(), self.v.as_mut_slice());
        let (vh, th) = (self.v_hat.as_mut_slice(), self.theta.as_mut_slice());
        for j in 0..gs.len() {
            let g = gs[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * (g * g);
            vh[j] = vh[j].max(v[j]);
            th[j] -= lr * m[j] / math::sqrt(vh[j] + eps);
        }
        self.t = t_next;
        self.m.validate_finite("amsgrad first moment")?;
        self.v.validate_finite("amsgrad second moment")?;
        self.theta.validate_finite("amsgrad iterate")?;
        Ok(&self.theta)
    }

    /// One plain-SGD step; moments are untouched.
    pub fn sgd_step(&mut self, g_bar: &ParamVector, epoch: u64) -> Result<&ParamVector, CoreError> {
        if g_bar.dim() != self.theta.dim() {
            return Err(CoreError::DimMismatch { expected: self.theta.dim(), got: g_bar.dim() });
        }
        let t_next = self.t + 1;
        let lr = self.schedule.lr_at(t_next, epoch);
        for (th, g) in self.theta.as_mut_slice().iter_mut().zip(g_bar.as_slice()) {
            *th -= lr * g;
        }
        self.t = t_next;
        Ok(&self.theta)
    }
}
