//! Test problems with analytically controllable constants: heterogeneous
//! quadratics (exact smoothness, noise variance and data-heterogeneity
//! values), binary logistic regression, and a tiny MLP — plus the
//! partitioning of data across workers.
//!
//! Per-worker losses follow `f(theta) = (1/n) sum_i f_i(theta)`. A worker's
//! view of the problem is a [`Shard`]: either one quadratic component
//! `(A_i, c_i)` or a subset of sample indices. Stochastic gradients are
//! unbiased for the shard's full gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::compressor::Span;
use crate::error::CoreError;
use crate::math;
use crate::numerics::{gaussian_vector, ParamVector, RngStream};
use crate::streams;

/// A worker's view of the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shard {
    /// Index of a quadratic component `(A_i, c_i)`.
    Component(usize),
    /// Sample indices into the shared dataset.
    Samples(Vec<usize>),
}

/// Hidden-layer nonlinearity for the tiny MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Subgradient 0 at the kink.
    Relu,
    Tanh,
}

#[derive(Debug, Clone)]
struct QuadComponent {
    a_diag: Vec<f64>,
    center: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Quadratic {
    components: Vec<QuadComponent>,
    noise_std: f64,
    /// Radius of the origin-centered ball on which the gradient-norm
    /// bound reported by [`StochasticObjective::gradient_bound`] is valid.
    trust_region: Option<f64>,
}

#[derive(Debug, Clone)]
struct Logistic {
    /// Row-major `n_samples x dim`.
    features: Vec<f64>,
    /// Labels in `{-1, +1}`.
    labels: Vec<f64>,
    n_samples: usize,
    l2_reg: f64,
}

#[derive(Debug, Clone)]
struct TinyMlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    /// Row-major `n_samples x layer_sizes[0]`.
    inputs: Vec<f64>,
    /// Row-major `n_samples x layer_sizes[last]`.
    targets: Vec<f64>,
    n_samples: usize,
}

#[derive(Debug, Clone)]
enum ObjectiveKind {
    Quadratic(Quadratic),
    Logistic(Logistic),
    TinyMlp(TinyMlp),
}

/// How data is spread across `n` workers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    /// Disjoint uniform shards, redrawn every epoch. Quadratics get one
    /// shared component, so worker objectives coincide exactly.
    IidShuffle,
    /// Fixed skewed assignment. Quadratics get per-worker centers
    /// `c_i = c + spread * u_i` with centered `u_i`; sample-based
    /// objectives get label-sorted chunks, with `spread` in `[0, 1]`
    /// giving the fraction of samples assigned by sorted order.
    Heterogeneous { spread: f64 },
}

/// Partition request: mode, worker count, and the seed that fixes it.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub n: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n == 0 {
            return Err(CoreError::InvalidSpec("worker count must be >= 1".into()));
        }
        if let PartitionMode::Heterogeneous { spread } = self.mode {
            if !(spread >= 0.0) {
                return Err(CoreError::InvalidSpec(format!(
                    "heterogeneity spread must be >= 0, got {spread}"
                )));
            }
        }
        Ok(())
    }
}

/// A test problem with per-worker losses and seeded stochastic gradients.
#[derive(Debug, Clone)]
pub struct StochasticObjective {
    dim: usize,
    kind: ObjectiveKind,
    param_groups: Vec<Span>,
}

impl StochasticObjective {
    /// Quadratic `f_i(theta) = 0.5 (theta - c_i)' A (theta - c_i)` with a
    /// diagonal `A` and i.i.d. Gaussian gradient noise of the given
    /// standard deviation per coordinate.
    pub fn quadratic(a_diag: Vec<f64>, center: Vec<f64>, noise_std: f64) -> Self {
        assert_eq!(a_diag.len(), center.len(), "A and c must share a dimension");
        assert!(!a_diag.is_empty());
        assert!(a_diag.iter().all(|&a| a > 0.0), "A must be positive definite");
        assert!(noise_std >= 0.0);
        let dim = a_diag.len();
        Self {
            dim,
            kind: ObjectiveKind::Quadratic(Quadratic {
                components: vec![QuadComponent { a_diag, center }],
                noise_std,
                trust_region: None,
            }),
            param_groups: vec![Span::new(0, dim)],
        }
    }

    /// Declares the origin-centered ball `||theta|| <= radius` on which a
    /// gradient-norm bound is reported (noiseless quadratics only).
    pub fn with_trust_region(mut self, radius: f64) -> Self {
        assert!(radius > 0.0);
        match &mut self.kind {
            ObjectiveKind::Quadratic(q) => q.trust_region = Some(radius),
            _ => panic!("trust regions are only defined for quadratics"),
        }
        self
    }

    /// Binary logistic regression with optional L2 regularization.
    /// `features` is row-major `n_samples x dim`; labels must be +-1.
    pub fn logistic(
        features: Vec<f64>,
        labels: Vec<f64>,
        dim: usize,
        l2_reg: f64,
    ) -> Result<Self, CoreError> {
        let n_samples = labels.len();
        if n_samples == 0 || dim == 0 {
            return Err(CoreError::InvalidSpec("logistic data must be nonempty".into()));
        }
        if features.len() != n_samples * dim {
            return Err(CoreError::InvalidSpec(format!(
                "feature matrix has {} entries, expected {n_samples} x {dim}",
                features.len()
            )));
        }
        if !labels.iter().all(|&y| y == 1.0 || y == -1.0) {
            return Err(CoreError::InvalidSpec("labels must be -1 or +1".into()));
        }
        if l2_reg < 0.0 {
            return Err(CoreError::InvalidSpec("l2_reg must be >= 0".into()));
        }
        Ok(Self {
            dim,
            kind: ObjectiveKind::Logistic(Logistic { features, labels, n_samples, l2_reg }),
            param_groups: vec![Span::new(0, dim)],
        })
    }

    /// Seeded two-class Gaussian mixture for logistic regression: class
    /// `y` has mean `y * sep / sqrt(dim)` per coordinate and unit noise.
    pub fn logistic_synthetic(
        dim: usize,
        n_samples: usize,
        sep: f64,
        l2_reg: f64,
        seed: u64,
    ) -> Self {
        let mut rng = RngStream::new(seed, streams::DATA_GEN);
        let shift = sep / math::sqrt(dim as f64);
        let mut features = Vec::with_capacity(n_samples * dim);
        let mut labels = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let y = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            labels.push(y);
            for _ in 0..dim {
                features.push(y * shift + rng.next_gaussian());
            }
        }
        Self::logistic(features, labels, dim, l2_reg).expect("synthetic data is well formed")
    }

    /// Tiny MLP regression (squared loss) on an explicit dataset. The
    /// parameter vector packs, per layer, the row-major weight matrix
    /// followed by the bias vector; each gets its own parameter group.
    pub fn tiny_mlp(
        layer_sizes: Vec<usize>,
        activation: Activation,
        inputs: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(CoreError::InvalidSpec("mlp needs >= 2 nonempty layers".into()));
        }
        let in_dim = layer_sizes[0];
        let out_dim = *layer_sizes.last().unwrap();
        if inputs.is_empty() || inputs.len() % in_dim != 0 {
            return Err(CoreError::InvalidSpec("mlp input matrix shape mismatch".into()));
        }
        let n_samples = inputs.len() / in_dim;
        if targets.len() != n_samples * out_dim {
            return Err(CoreError::InvalidSpec("mlp target matrix shape mismatch".into()));
        }
        let mut groups = Vec::new();
        let mut offset = 0;
        for l in 0..layer_sizes.len() - 1 {
            let w = layer_sizes[l] * layer_sizes[l + 1];
            groups.push(Span::new(offset, offset + w));
            offset += w;
            groups.push(Span::new(offset, offset + layer_sizes[l + 1]));
            offset += layer_sizes[l + 1];
        }
        Ok(Self {
            dim: offset,
            kind: ObjectiveKind::TinyMlp(TinyMlp {
                layer_sizes,
                activation,
                inputs,
                targets,
                n_samples,
            }),
            param_groups: groups,
        })
    }

    /// Seeded teacher-student MLP dataset: Gaussian inputs, targets from a
    /// random linear map squashed through tanh.
    pub fn mlp_synthetic(
        layer_sizes: Vec<usize>,
        activation: Activation,
        n_samples: usize,
        seed: u64,
    ) -> Self {
        let in_dim = layer_sizes[0];
        let out_dim = *layer_sizes.last().unwrap();
        let mut rng = RngStream::new(seed, streams::DATA_GEN);
        let teacher: Vec<f64> =
            (0..in_dim * out_dim).map(|_| rng.next_gaussian() / math::sqrt(in_dim as f64)).collect();
        let mut inputs = Vec::with_capacity(n_samples * in_dim);
        let mut targets = Vec::with_capacity(n_samples * out_dim);
        for _ in 0..n_samples {
            let x: Vec<f64> = (0..in_dim).map(|_| rng.next_gaussian()).collect();
            for j in 0..out_dim {
                let z: f64 = (0..in_dim).map(|i| x[i] * teacher[i * out_dim + j]).sum();
                targets.push(math::tanh(z));
            }
            inputs.extend_from_slice(&x);
        }
        Self::tiny_mlp(layer_sizes, activation, inputs, targets).expect("synthetic data is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Logical parameter groups (per-layer weights/biases for the MLP, a
    /// single group otherwise); the default block layout for block-sign
    /// compression.
    pub fn param_groups(&self) -> &[Span] {
        &self.param_groups
    }

    pub fn n_samples(&self) -> Option<usize> {
        match &self.kind {
            ObjectiveKind::Quadratic(_) => None,
            ObjectiveKind::Logistic(l) => Some(l.n_samples),
            ObjectiveKind::TinyMlp(m) => Some(m.n_samples),
        }
    }

    pub fn is_sample_based(&self) -> bool {
        self.n_samples().is_some()
    }

    /// Number of quadratic components materialized so far.
    pub fn n_components(&self) -> usize {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => q.components.len(),
            _ => 1,
        }
    }

    /// Smoothness constant: exact for quadratics; for logistic regression
    /// the trace bound `L = 0.25 tr(X'X)/N + lambda`. Not declared for
    /// the MLP.
    pub fn smoothness(&self) -> Option<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => Some(
                q.components
                    .iter()
                    .flat_map(|c| c.a_diag.iter().copied())
                    .fold(0.0, f64::max),
            ),
            ObjectiveKind::Logistic(l) => {
                let trace: f64 = l.features.iter().map(|x| x * x).sum();
                Some(0.25 * trace / l.n_samples as f64 + l.l2_reg)
            }
            ObjectiveKind::TinyMlp(_) => None,
        }
    }

    /// Local gradient-noise variance `sigma^2 = d * noise_std^2` at batch
    /// size 1 (quadratics only).
    pub fn local_variance(&self) -> Option<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => Some(self.dim as f64 * q.noise_std * q.noise_std),
            _ => None,
        }
    }

    /// Uniform gradient-norm bound, valid inside the trust region; only
    /// reported for noiseless quadratics, where it holds surely.
    pub fn gradient_bound(&self) -> Option<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic(q) if q.noise_std == 0.0 => {
                let radius = q.trust_region?;
                let bound = q
                    .components
                    .iter()
                    .map(|c| {
                        let a_max = c.a_diag.iter().copied().fold(0.0, f64::max);
                        let c_norm =
                            math::sqrt(c.center.iter().map(|x| x * x).sum::<f64>());
                        a_max * (radius + c_norm)
                    })
                    .fold(0.0, f64::max);
                Some(bound)
            }
            _ => None,
        }
    }

    pub fn in_trust_region(&self, theta: &ParamVector) -> bool {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => match q.trust_region {
                Some(r) => theta.norm2() <= r,
                None => true,
            },
            _ => true,
        }
    }

    /// Global minimizer and minimum value (quadratics; shared `A`).
    pub fn minimizer(&self) -> Option<(ParamVector, f64)> {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => {
                let n = q.components.len() as f64;
                let mut mean_c = vec![0.0; self.dim];
                for comp in &q.components {
                    for (m, c) in mean_c.iter_mut().zip(&comp.center) {
                        *m += c;
                    }
                }
                for m in &mut mean_c {
                    *m /= n;
                }
                let theta_star = ParamVector::from_vec(mean_c);
                let mut f_star = 0.0;
                for comp in &q.components {
                    f_star += quad_loss(comp, theta_star.as_slice());
                }
                Some((theta_star, f_star / n))
            }
            _ => None,
        }
    }

    /// Data-heterogeneity value `(1/n) sum_i ||A (c_i - c_bar)||^2` for
    /// quadratics with a shared `A`; independent of `theta`.
    pub fn analytic_global_variance(&self) -> Option<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => {
                let n = q.components.len();
                if n == 1 {
                    return Some(0.0);
                }
                let a = &q.components[0].a_diag;
                let mut mean_c = vec![0.0; self.dim];
                for comp in &q.components {
                    for (m, c) in mean_c.iter_mut().zip(&comp.center) {
                        *m += c;
                    }
                }
                for m in &mut mean_c {
                    *m /= n as f64;
                }
                let mut acc = 0.0;
                for comp in &q.components {
                    acc += comp
                        .center
                        .iter()
                        .zip(&mean_c)
                        .zip(a)
                        .map(|((c, m), aj)| {
                            let dev = aj * (c - m);
                            dev * dev
                        })
                        .sum::<f64>();
                }
                Some(acc / n as f64)
            }
            _ => None,
        }
    }

    fn component(&self, idx: usize) -> &QuadComponent {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => &q.components[idx],
            _ => panic!("component shard on a sample-based objective"),
        }
    }

    /// Exact per-worker gradient of `f_i` at `theta`.
    pub fn full_gradient(&self, shard: &Shard, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), self.dim);
        match (&self.kind, shard) {
            (ObjectiveKind::Quadratic(_), Shard::Component(i)) => {
                quad_gradient(self.component(*i), theta.as_slice())
            }
            (ObjectiveKind::Logistic(l), Shard::Samples(idx)) => {
                logistic_gradient(l, idx, theta.as_slice())
            }
            (ObjectiveKind::TinyMlp(m), Shard::Samples(idx)) => {
                mlp_gradient(m, idx, theta.as_slice())
            }
            _ => panic!("shard kind does not match objective kind"),
        }
    }

    /// Unbiased stochastic gradient: full gradient plus scaled Gaussian
    /// noise for quadratics, a without-replacement minibatch otherwise.
    pub fn stochastic_gradient(
        &self,
        shard: &Shard,
        theta: &ParamVector,
        rng: &mut RngStream,
        batch: usize,
    ) -> Result<ParamVector, CoreError> {
        if batch == 0 {
            return Err(CoreError::InvalidSpec("batch size must be >= 1".into()));
        }
        match (&self.kind, shard) {
            (ObjectiveKind::Quadratic(q), Shard::Component(i)) => {
                let mut g = quad_gradient(self.component(*i), theta.as_slice());
                let noise =
                    gaussian_vector(rng, self.dim, q.noise_std / math::sqrt(batch as f64));
                g.add_assign(&noise);
                Ok(g)
            }
            (ObjectiveKind::Logistic(_), Shard::Samples(idx))
            | (ObjectiveKind::TinyMlp(_), Shard::Samples(idx)) => {
                if idx.is_empty() {
                    return Err(CoreError::EmptyShard);
                }
                if batch > idx.len() {
                    return Err(CoreError::InvalidSpec(format!(
                        "batch {batch} exceeds shard size {}",
                        idx.len()
                    )));
                }
                let picked = rng.sample_indices(idx.len(), batch);
                let minibatch: Vec<usize> = picked.iter().map(|&p| idx[p]).collect();
                Ok(match &self.kind {
                    ObjectiveKind::Logistic(l) => {
                        logistic_gradient(l, &minibatch, theta.as_slice())
                    }
                    ObjectiveKind::TinyMlp(m) => mlp_gradient(m, &minibatch, theta.as_slice()),
                    ObjectiveKind::Quadratic(_) => unreachable!(),
                })
            }
            _ => panic!("shard kind does not match objective kind"),
        }
    }

    /// Per-worker loss `f_i(theta)`.
    pub fn local_loss(&self, shard: &Shard, theta: &ParamVector) -> f64 {
        assert_eq!(theta.dim(), self.dim);
        match (&self.kind, shard) {
            (ObjectiveKind::Quadratic(_), Shard::Component(i)) => {
                quad_loss(self.component(*i), theta.as_slice())
            }
            (ObjectiveKind::Logistic(l), Shard::Samples(idx)) => {
                logistic_loss(l, idx, theta.as_slice())
            }
            (ObjectiveKind::TinyMlp(m), Shard::Samples(idx)) => {
                mlp_loss(m, idx, theta.as_slice())
            }
            _ => panic!("shard kind does not match objective kind"),
        }
    }

    /// Global loss `f(theta) = (1/n) sum_i f_i(theta)`. Identical shards
    /// short-circuit to the single-worker value.
    pub fn global_loss(&self, shards: &[Shard], theta: &ParamVector) -> f64 {
        assert!(!shards.is_empty());
        if shards.iter().all(|s| s == &shards[0]) {
            return self.local_loss(&shards[0], theta);
        }
        let sum: f64 = shards.iter().map(|s| self.local_loss(s, theta)).sum();
        sum / shards.len() as f64
    }

    /// Mean of per-worker full gradients, in ascending worker order.
    pub fn global_full_gradient(&self, shards: &[Shard], theta: &ParamVector) -> ParamVector {
        assert!(!shards.is_empty());
        if shards.iter().all(|s| s == &shards[0]) {
            return self.full_gradient(&shards[0], theta);
        }
        let mut sum = self.full_gradient(&shards[0], theta);
        for shard in &shards[1..] {
            sum.add_assign(&self.full_gradient(shard, theta));
        }
        let n = shards.len() as f64;
        for x in sum.as_mut_slice() {
            *x /= n;
        }
        sum
    }

    /// `||grad f(theta)||^2` of the true global objective.
    pub fn global_grad_norm_sq(&self, shards: &[Shard], theta: &ParamVector) -> f64 {
        self.global_full_gradient(shards, theta).norm2_sq()
    }

    /// Measured data-heterogeneity `(1/n) sum_i ||grad f_i - grad f||^2`.
    /// Exactly zero when all shards coincide.
    pub fn global_variance(&self, shards: &[Shard], theta: &ParamVector) -> f64 {
        assert!(!shards.is_empty());
        if shards.iter().all(|s| s == &shards[0]) {
            return 0.0;
        }
        let grads: Vec<ParamVector> =
            shards.iter().map(|s| self.full_gradient(s, theta)).collect();
        let mut mean = grads[0].clone();
        for g in &grads[1..] {
            mean.add_assign(g);
        }
        let n = grads.len() as f64;
        for x in mean.as_mut_slice() {
            *x /= n;
        }
        let mut acc = 0.0;
        for g in &grads {
            acc += g
                .as_slice()
                .iter()
                .zip(mean.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        acc / n
    }

    /// Central-difference gradient of `f_i`, the verification oracle for
    /// the analytic gradients.
    pub fn finite_diff_gradient(&self, shard: &Shard, theta: &ParamVector, h: f64) -> ParamVector {
        assert!(h > 0.0);
        let mut probe = theta.clone();
        let mut out = ParamVector::zeros(self.dim);
        for j in 0..self.dim {
            let orig = probe.as_slice()[j];
            probe.as_mut_slice()[j] = orig + h;
            let up = self.local_loss(shard, &probe);
            probe.as_mut_slice()[j] = orig - h;
            let down = self.local_loss(shard, &probe);
            probe.as_mut_slice()[j] = orig;
            out.as_mut_slice()[j] = (up - down) / (2.0 * h);
        }
        out
    }

    /// Materializes per-worker shards. Heterogeneous quadratics grow
    /// per-worker centers `c_i = c + spread * u_i` (centered `u_i`), which
    /// is why this takes `&mut self`.
    pub fn make_partition(&mut self, plan: &PartitionPlan) -> Result<Vec<Shard>, CoreError> {
        plan.validate()?;
        let mut rng = RngStream::new(plan.seed, streams::PARTITION);
        match &mut self.kind {
            ObjectiveKind::Quadratic(q) => match plan.mode {
                PartitionMode::IidShuffle => {
                    if q.components.len() == 1 {
                        Ok(vec![Shard::Component(0); plan.n])
                    } else if q.components.len() == plan.n {
                        Ok((0..plan.n).map(Shard::Component).collect())
                    } else {
                        Err(CoreError::InvalidSpec(format!(
                            "{} quadratic components cannot serve {} workers",
                            q.components.len(),
                            plan.n
                        )))
                    }
                }
                PartitionMode::Heterogeneous { spread } => {
                    let base = q.components[0].clone();
                    let dim = base.center.len();
                    let mut offsets: Vec<ParamVector> =
                        (0..plan.n).map(|_| gaussian_vector(&mut rng, dim, 1.0)).collect();
                    let mut mean = vec![0.0; dim];
                    for u in &offsets {
                        for (m, x) in mean.iter_mut().zip(u.as_slice()) {
                            *m += x;
                        }
                    }
                    for m in &mut mean {
                        *m /= plan.n as f64;
                    }
                    for u in &mut offsets {
                        for (x, m) in u.as_mut_slice().iter_mut().zip(&mean) {
                            *x -= m;
                        }
                    }
                    q.components = offsets
                        .iter()
                        .map(|u| QuadComponent {
                            a_diag: base.a_diag.clone(),
                            center: base
                                .center
                                .iter()
                                .zip(u.as_slice())
                                .map(|(c, x)| c + spread * x)
                                .collect(),
                        })
                        .collect();
                    Ok((0..plan.n).map(Shard::Component).collect())
                }
            },
            ObjectiveKind::Logistic(_) | ObjectiveKind::TinyMlp(_) => {
                let n_samples = self.n_samples().unwrap();
                if plan.n > n_samples {
                    return Err(CoreError::InvalidSpec(format!(
                        "cannot partition {n_samples} samples over {} workers",
                        plan.n
                    )));
                }
                match plan.mode {
                    PartitionMode::IidShuffle => Ok(chunk_assignment(
                        shuffled_order(n_samples, &mut rng),
                        plan.n,
                    )),
                    PartitionMode::Heterogeneous { spread } => {
                        let mut order = self.label_sorted_order();
                        let frac = spread.clamp(0.0, 1.0);
                        let keep_sorted =
                            math::ceil(frac * n_samples as f64) as usize;
                        let tail_start = keep_sorted.min(n_samples);
                        rng.shuffle(&mut order[tail_start..]);
                        Ok(chunk_assignment(order, plan.n))
                    }
                }
            }
        }
    }

    /// Redraws the uniform assignment for the next epoch; `None` when the
    /// partition is fixed (heterogeneous or quadratic).
    pub fn reshuffle(
        &self,
        plan: &PartitionPlan,
        rng: &mut RngStream,
    ) -> Option<Vec<Shard>> {
        match (&self.kind, plan.mode) {
            (ObjectiveKind::Logistic(_) | ObjectiveKind::TinyMlp(_), PartitionMode::IidShuffle) => {
                let n_samples = self.n_samples().unwrap();
                Some(chunk_assignment(shuffled_order(n_samples, rng), plan.n))
            }
            _ => None,
        }
    }

    fn label_sorted_order(&self) -> Vec<usize> {
        let key = |i: usize| -> f64 {
            match &self.kind {
                ObjectiveKind::Logistic(l) => l.labels[i],
                ObjectiveKind::TinyMlp(m) => {
                    let out_dim = *m.layer_sizes.last().unwrap();
                    m.targets[i * out_dim]
                }
                ObjectiveKind::Quadratic(_) => 0.0,
            }
        };
        let mut order: Vec<usize> = (0..self.n_samples().unwrap_or(0)).collect();
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
        order
    }
}

fn shuffled_order(n_samples: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_samples).collect();
    rng.shuffle(&mut order);
    order
}

/// Splits an assignment order into `n` near-equal contiguous chunks.
fn chunk_assignment(order: Vec<usize>, n: usize) -> Vec<Shard> {
    let total = order.len();
    (0..n)
        .map(|i| {
            let lo = i * total / n;
            let hi = (i + 1) * total / n;
            Shard::Samples(order[lo..hi].to_vec())
        })
        .collect()
}

fn quad_gradient(comp: &QuadComponent, theta: &[f64]) -> ParamVector {
    let data = theta
        .iter()
        .zip(&comp.center)
        .zip(&comp.a_diag)
        .map(|((t, c), a)| a * (t - c))
        .collect();
    ParamVector::from_vec(data)
}

fn quad_loss(comp: &QuadComponent, theta: &[f64]) -> f64 {
    0.5 * theta
        .iter()
        .zip(&comp.center)
        .zip(&comp.a_diag)
        .map(|((t, c), a)| {
            let dev = t - c;
            a * dev * dev
        })
        .sum::<f64>()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + math::exp(-z))
    } else {
        let e = math::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(u))` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + math::ln_1p(math::exp(-u))
    } else {
        math::ln_1p(math::exp(u))
    }
}

fn logistic_gradient(l: &Logistic, idx: &[usize], theta: &[f64]) -> ParamVector {
    let d = theta.len();
    let mut grad = vec![0.0; d];
    for &i in idx {
        let row = &l.features[i * d..(i + 1) * d];
        let z: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
        let y_pos = if l.labels[i] > 0.0 { 1.0 } else { 0.0 };
        let factor = sigmoid(z) - y_pos;
        for (g, x) in grad.iter_mut().zip(row) {
            *g += factor * x;
        }
    }
    let inv = idx.len() as f64;
    for (g, t) in grad.iter_mut().zip(theta) {
        *g = *g / inv + l.l2_reg * t;
    }
    ParamVector::from_vec(grad)
}

fn logistic_loss(l: &Logistic, idx: &[usize], theta: &[f64]) -> f64 {
    let d = theta.len();
    let mut acc = 0.0;
    for &i in idx {
        let row = &l.features[i * d..(i + 1) * d];
        let z: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
        acc += softplus(-l.labels[i] * z);
    }
    let reg = 0.5 * l.l2_reg * theta.iter().map(|t| t * t).sum::<f64>();
    acc / idx.len() as f64 + reg
}

struct MlpLayout<'a> {
    sizes: &'a [usize],
}

impl<'a> MlpLayout<'a> {
    fn weight_offset(&self, layer: usize) -> usize {
        let mut offset = 0;
        for l in 0..layer {
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        offset
    }

    fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.sizes[layer] * self.sizes[layer + 1]
    }
}

fn activate(activation: Activation, z: f64) -> f64 {
    match activation {
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Tanh => math::tanh(z),
    }
}

fn activate_deriv(activation: Activation, z: f64) -> f64 {
    match activation {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => {
            let t = math::tanh(z);
            1.0 - t * t
        }
    }
}

/// Forward pass for one sample; returns per-layer pre-activations and
/// activations (activations[0] is the input).
fn mlp_forward(
    m: &TinyMlp,
    theta: &[f64],
    sample: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let layout = MlpLayout { sizes: &m.layer_sizes };
    let in_dim = m.layer_sizes[0];
    let n_layers = m.layer_sizes.len() - 1;
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    activations.push(m.inputs[sample * in_dim..(sample + 1) * in_dim].to_vec());
    for l in 0..n_layers {
        let (rows, cols) = (m.layer_sizes[l], m.layer_sizes[l + 1]);
        let w = &theta[layout.weight_offset(l)..layout.weight_offset(l) + rows * cols];
        let b = &theta[layout.bias_offset(l)..layout.bias_offset(l) + cols];
        let prev = activations.last().unwrap();
        let mut z = b.to_vec();
        for (i, &a) in prev.iter().enumerate() {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += a * w[i * cols + j];
            }
        }
        let last = l == n_layers - 1;
        let a_next = if last {
            z.clone()
        } else {
            z.iter().map(|&v| activate(m.activation, v)).collect()
        };
        pre.push(z);
        activations.push(a_next);
    }
    (pre, activations)
}

fn mlp_loss(m: &TinyMlp, idx: &[usize], theta: &[f64]) -> f64 {
    let out_dim = *m.layer_sizes.last().unwrap();
    let mut acc = 0.0;
    for &s in idx {
        let (_, activations) = mlp_forward(m, theta, s);
        let out = activations.last().unwrap();
        let target = &m.targets[s * out_dim..(s + 1) * out_dim];
        acc += 0.5
            * out
                .iter()
                .zip(target)
                .map(|(o, y)| (o - y) * (o - y))
                .sum::<f64>();
    }
    acc / idx.len() as f64
}

fn mlp_gradient(m: &TinyMlp, idx: &[usize], theta: &[f64]) -> ParamVector {
    let layout = MlpLayout { sizes: &m.layer_sizes };
    let out_dim = *m.layer_sizes.last().unwrap();
    let n_layers = m.layer_sizes.len() - 1;
    let mut grad = vec![0.0; theta.len()];
    for &s in idx {
        let (pre, activations) = mlp_forward(m, theta, s);
        let out = activations.last().unwrap();
        let target = &m.targets[s * out_dim..(s + 1) * out_dim];
        // squared-loss delta at the linear output layer
        let mut delta: Vec<f64> = out.iter().zip(target).map(|(o, y)| o - y).collect();
        for l in (0..n_layers).rev() {
            let (rows, cols) = (m.layer_sizes[l], m.layer_sizes[l + 1]);
            let w_off = layout.weight_offset(l);
            let b_off = layout.bias_offset(l);
            let prev = &activations[l];
            for i in 0..rows {
                for j in 0..cols {
                    grad[w_off + i * cols + j] += prev[i] * delta[j];
                }
            }
            for j in 0..cols {
                grad[b_off + j] += delta[j];
            }
            if l > 0 {
                let w = &theta[w_off..w_off + rows * cols];
                let mut next_delta = vec![0.0; rows];
                for i in 0..rows {
                    let back: f64 = (0..cols).map(|j| w[i * cols + j] * delta[j]).sum();
                    next_delta[i] = back * activate_deriv(m.activation, pre[l - 1][i]);
                }
                delta = next_delta;
            }
        }
    }
    let inv = idx.len() as f64;
    for g in &mut grad {
        *g /= inv;
    }
    ParamVector::from_vec(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(xs: &[f64]) -> ParamVector {
        ParamVector::from_vec(xs.to_vec())
    }

    fn all_samples(obj: &StochasticObjective) -> Shard {
        Shard::Samples((0..obj.n_samples().unwrap()).collect())
    }

    #[test]
    fn quadratic_gradient_and_loss() {
        let obj = StochasticObjective::quadratic(vec![1.0], vec![0.0], 0.0);
        let shard = Shard::Component(0);
        assert_eq!(obj.full_gradient(&shard, &pv(&[2.0])), pv(&[2.0]));
        assert_eq!(obj.local_loss(&shard, &pv(&[2.0])), 2.0);
        assert_eq!(obj.global_grad_norm_sq(&[shard.clone()], &pv(&[2.0])), 4.0);
        // stationary at the center
        assert_eq!(obj.full_gradient(&shard, &pv(&[0.0])).norm2(), 0.0);
    }

    #[test]
    fn noiseless_stochastic_gradient_equals_full() {
        let obj = StochasticObjective::quadratic(vec![2.0, 0.5], vec![1.0, -1.0], 0.0);
        let shard = Shard::Component(0);
        let theta = pv(&[0.3, 0.9]);
        let mut rng = RngStream::new(3, 10);
        let g = obj.stochastic_gradient(&shard, &theta, &mut rng, 1).unwrap();
        assert_eq!(g, obj.full_gradient(&shard, &theta));
    }

    #[test]
    fn stochastic_gradient_is_unbiased() {
        let d = 20;
        let sigma_c = 0.5;
        let obj = StochasticObjective::quadratic(vec![1.0; d], vec![0.0; d], sigma_c);
        let shard = Shard::Component(0);
        let theta = pv(&vec![0.5; d]);
        let full = obj.full_gradient(&shard, &theta);
        let mut rng = RngStream::new(77, 10);
        let draws = 10_000;
        let mut mean = ParamVector::zeros(d);
        for _ in 0..draws {
            mean.add_assign(&obj.stochastic_gradient(&shard, &theta, &mut rng, 1).unwrap());
        }
        let mean = mean.scale(1.0 / draws as f64);
        let err = mean.sub(&full).unwrap().norm2();
        let sigma = (d as f64).sqrt() * sigma_c;
        let bound = 3.0 * sigma / (draws as f64).sqrt();
        assert!(err < bound, "MC mean error {err} vs bound {bound}");
    }

    #[test]
    fn logistic_single_sample_gradient() {
        let obj = StochasticObjective::logistic(vec![1.0], vec![1.0], 1, 0.0).unwrap();
        let g = obj.full_gradient(&all_samples(&obj), &pv(&[0.0]));
        assert_eq!(g, pv(&[-0.5]));
    }

    #[test]
    fn logistic_mirrored_dataset_is_stationary_at_zero() {
        // every feature vector appears with both labels, so theta = 0 is
        // the exact minimizer for any l2_reg >= 0
        let features = vec![0.4, -1.0, 0.4, -1.0, 2.0, 0.3, 2.0, 0.3];
        let labels = vec![1.0, -1.0, 1.0, -1.0];
        let obj = StochasticObjective::logistic(features, labels, 2, 0.1).unwrap();
        let g = obj.full_gradient(&all_samples(&obj), &pv(&[0.0, 0.0]));
        assert!(g.norm2() < 1e-10);
    }

    #[test]
    fn full_batch_equals_full_gradient() {
        let obj = StochasticObjective::logistic_synthetic(4, 32, 1.0, 0.01, 5);
        let shard = all_samples(&obj);
        let theta = pv(&[0.2, -0.1, 0.05, 0.3]);
        let mut rng = RngStream::new(6, 11);
        let g = obj.stochastic_gradient(&shard, &theta, &mut rng, 32).unwrap();
        assert_eq!(g, obj.full_gradient(&shard, &theta));
    }

    #[test]
    fn minibatch_needs_nonempty_shard_and_valid_batch() {
        let obj = StochasticObjective::logistic_synthetic(3, 8, 1.0, 0.0, 5);
        let theta = ParamVector::zeros(3);
        let mut rng = RngStream::new(6, 11);
        let empty = Shard::Samples(Vec::new());
        assert_eq!(
            obj.stochastic_gradient(&empty, &theta, &mut rng, 1).unwrap_err(),
            CoreError::EmptyShard
        );
        let shard = Shard::Samples(vec![0, 1]);
        assert!(obj.stochastic_gradient(&shard, &theta, &mut rng, 3).is_err());
    }

    #[test]
    fn finite_diff_matches_quadratic_and_logistic() {
        let quad = StochasticObjective::quadratic(vec![3.0, 0.7], vec![0.2, -0.4], 0.0);
        let theta = pv(&[1.1, 0.6]);
        let fd = quad.finite_diff_gradient(&Shard::Component(0), &theta, 1e-5);
        let exact = quad.full_gradient(&Shard::Component(0), &theta);
        let rel = fd.sub(&exact).unwrap().norm2() / exact.norm2();
        assert!(rel < 1e-8, "quadratic fd rel err {rel}");

        let logi = StochasticObjective::logistic_synthetic(5, 24, 1.2, 0.05, 9);
        let shard = all_samples(&logi);
        let theta = pv(&[0.1, -0.2, 0.3, 0.4, -0.5]);
        let fd = logi.finite_diff_gradient(&shard, &theta, 1e-5);
        let exact = logi.full_gradient(&shard, &theta);
        let rel = fd.sub(&exact).unwrap().norm2() / exact.norm2();
        assert!(rel < 1e-8, "logistic fd rel err {rel}");
    }

    #[test]
    fn finite_diff_matches_mlp_gradients() {
        for activation in [Activation::Tanh, Activation::Relu] {
            let obj = StochasticObjective::mlp_synthetic(vec![3, 5, 2], activation, 16, 21);
            let shard = all_samples(&obj);
            let mut rng = RngStream::new(13, 1);
            let theta = gaussian_vector(&mut rng, obj.dim(), 0.4);
            let fd = obj.finite_diff_gradient(&shard, &theta, 1e-5);
            let exact = obj.full_gradient(&shard, &theta);
            let rel = fd.sub(&exact).unwrap().norm2() / exact.norm2().max(1e-12);
            // random tanh-smoothed data keeps ReLU pre-activations away
            // from the kink at this seed
            assert!(rel < 1e-5, "{activation:?} fd rel err {rel}");
        }
    }

    #[test]
    fn mlp_param_groups_cover_dim_per_layer() {
        let obj = StochasticObjective::mlp_synthetic(vec![4, 6, 2], Activation::Tanh, 4, 2);
        let groups = obj.param_groups();
        // W1 (4x6), b1 (6), W2 (6x2), b2 (2)
        let lens: Vec<usize> = groups.iter().map(Span::len).collect();
        assert_eq!(lens, vec![24, 6, 12, 2]);
        assert_eq!(obj.dim(), 44);
        crate::compressor::validate_cover(groups, obj.dim()).unwrap();
    }

    #[test]
    fn smoothness_witness_holds() {
        let quad = StochasticObjective::quadratic(vec![4.0, 1.0, 0.25], vec![0.0; 3], 0.0);
        let logi = StochasticObjective::logistic_synthetic(4, 40, 1.0, 0.02, 3);
        let mut rng = RngStream::new(31, 0);
        for obj in [&quad, &logi] {
            let shard = match obj.n_samples() {
                Some(_) => all_samples(obj),
                None => Shard::Component(0),
            };
            let lips = obj.smoothness().unwrap();
            for _ in 0..50 {
                let a = gaussian_vector(&mut rng, obj.dim(), 1.0);
                let b = gaussian_vector(&mut rng, obj.dim(), 1.0);
                let ga = obj.full_gradient(&shard, &a);
                let gb = obj.full_gradient(&shard, &b);
                let lhs = ga.sub(&gb).unwrap().norm2();
                let rhs = lips * a.sub(&b).unwrap().norm2();
                assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} > L * {rhs}");
            }
        }
    }

    #[test]
    fn iid_partition_preserves_sample_multiset() {
        let obj = StochasticObjective::logistic_synthetic(3, 23, 1.0, 0.0, 8);
        let mut obj = obj;
        let plan = PartitionPlan { mode: PartitionMode::IidShuffle, n: 4, seed: 17 };
        let shards = obj.make_partition(&plan).unwrap();
        let mut seen: Vec<usize> = shards
            .iter()
            .flat_map(|s| match s {
                Shard::Samples(v) => v.clone(),
                _ => unreachable!(),
            })
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn partition_rejects_more_workers_than_samples() {
        let mut obj = StochasticObjective::logistic_synthetic(3, 4, 1.0, 0.0, 8);
        let plan = PartitionPlan { mode: PartitionMode::IidShuffle, n: 5, seed: 17 };
        assert!(obj.make_partition(&plan).is_err());
    }

    #[test]
    fn single_worker_gets_the_whole_dataset() {
        let mut obj = StochasticObjective::logistic_synthetic(3, 9, 1.0, 0.0, 8);
        let plan = PartitionPlan { mode: PartitionMode::IidShuffle, n: 1, seed: 17 };
        let shards = obj.make_partition(&plan).unwrap();
        match &shards[0] {
            Shard::Samples(v) => assert_eq!(v.len(), 9),
            _ => unreachable!(),
        }
    }

    #[test]
    fn heterogeneous_quadratic_matches_analytic_variance() {
        let dim = 12;
        let spread = 0.8;
        let mut obj = StochasticObjective::quadratic(vec![1.0; dim], vec![0.5; dim], 0.0);
        let plan =
            PartitionPlan { mode: PartitionMode::Heterogeneous { spread }, n: 6, seed: 99 };
        let shards = obj.make_partition(&plan).unwrap();
        let analytic = obj.analytic_global_variance().unwrap();
        assert!(analytic > 0.0);
        let mut rng = RngStream::new(1, 1);
        for _ in 0..5 {
            let theta = gaussian_vector(&mut rng, dim, 2.0);
            let measured = obj.global_variance(&shards, &theta);
            let rel = (measured - analytic).abs() / analytic;
            assert!(rel < 1e-10, "measured {measured} vs analytic {analytic}");
        }
    }

    #[test]
    fn identical_shards_have_exactly_zero_variance() {
        let mut obj = StochasticObjective::quadratic(vec![1.0; 5], vec![0.0; 5], 0.3);
        let plan = PartitionPlan { mode: PartitionMode::IidShuffle, n: 3, seed: 4 };
        let shards = obj.make_partition(&plan).unwrap();
        let theta = pv(&[1.0, -2.0, 0.5, 0.0, 3.0]);
        assert_eq!(obj.global_variance(&shards, &theta), 0.0);
        // symmetry: global loss equals the single-worker loss
        assert_eq!(
            obj.global_loss(&shards, &theta),
            obj.local_loss(&shards[0], &theta)
        );
    }

    #[test]
    fn heterogeneous_sample_partition_is_fixed_and_skewed() {
        // alternating labels; full sort sends the -1 block to worker 0
        let n_samples = 40;
        let labels: Vec<f64> =
            (0..n_samples).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let features = vec![1.0; n_samples];
        let mut obj = StochasticObjective::logistic(features, labels, 1, 0.0).unwrap();
        let plan =
            PartitionPlan { mode: PartitionMode::Heterogeneous { spread: 1.0 }, n: 2, seed: 3 };
        let shards = obj.make_partition(&plan).unwrap();
        let even: Vec<usize> = (0..n_samples).step_by(2).collect();
        let odd: Vec<usize> = (1..n_samples).step_by(2).collect();
        assert_eq!(shards[0], Shard::Samples(even));
        assert_eq!(shards[1], Shard::Samples(odd));
        // heterogeneous shards are fixed across epochs
        let mut rng = RngStream::new(0, 0);
        assert!(obj.reshuffle(&plan, &mut rng).is_none());
        // iid reshuffle does redraw
        let iid = PartitionPlan { mode: PartitionMode::IidShuffle, n: 2, seed: 3 };
        let first = obj.reshuffle(&iid, &mut rng).unwrap();
        let second = obj.reshuffle(&iid, &mut rng).unwrap();
        assert_ne!(first, second);
    }

    #[test]
    fn minimizer_of_heterogeneous_quadratic() {
        let dim = 6;
        let mut obj = StochasticObjective::quadratic(vec![2.0; dim], vec![1.0; dim], 0.0);
        let plan =
            PartitionPlan { mode: PartitionMode::Heterogeneous { spread: 0.5 }, n: 4, seed: 11 };
        let shards = obj.make_partition(&plan).unwrap();
        let (theta_star, f_star) = obj.minimizer().unwrap();
        let g = obj.global_full_gradient(&shards, &theta_star);
        assert!(g.norm2() < 1e-12);
        assert!((obj.global_loss(&shards, &theta_star) - f_star).abs() < 1e-12);
        assert!(f_star > 0.0);
    }

    #[test]
    fn gradient_bound_requires_noiseless_trust_region() {
        let obj = StochasticObjective::quadratic(vec![2.0; 3], vec![0.0; 3], 0.0)
            .with_trust_region(5.0);
        let bound = obj.gradient_bound().unwrap();
        assert_eq!(bound, 10.0); // a_max * (R + ||c||) = 2 * 5
        assert!(obj.in_trust_region(&pv(&[3.0, 0.0, 0.0])));
        assert!(!obj.in_trust_region(&pv(&[6.0, 0.0, 0.0])));
        let noisy = StochasticObjective::quadratic(vec![2.0; 3], vec![0.0; 3], 0.1)
            .with_trust_region(5.0);
        assert!(noisy.gradient_bound().is_none());
    }

    #[test]
    fn local_variance_is_d_sigma_sq() {
        let obj = StochasticObjective::quadratic(vec![1.0; 10], vec![0.0; 10], 0.5);
        assert_eq!(obj.local_variance().unwrap(), 10.0 * 0.25);
    }
}
