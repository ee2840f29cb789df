//! Dense vector arithmetic and deterministic, splittable randomness.
//!
//! All reductions run in ascending index order so repeated runs are
//! bit-identical, and every public operation keeps entries finite (callers
//! can re-check at module seams with [`ParamVector::validate_finite`]).

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::math;

/// Dense vector of model parameters or gradients (`f64` throughout).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
}

impl ParamVector {
    /// Wraps an owned buffer. The dimension must be at least one.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "ParamVector must have dimension >= 1");
        Self { data }
    }

    /// All-zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "ParamVector must have dimension >= 1");
        Self { data: vec![0.0; dim] }
    }

    /// Vector with every entry equal to `value`.
    pub fn constant(dim: usize, value: f64) -> Self {
        assert!(dim >= 1, "ParamVector must have dimension >= 1");
        Self { data: vec![value; dim] }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Errors if any entry is NaN or infinite.
    pub fn validate_finite(&self, context: &'static str) -> Result<(), CoreError> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::NonFinite { context })
        }
    }

    fn check_dim(&self, other: &ParamVector) -> Result<(), CoreError> {
        if self.dim() == other.dim() {
            Ok(())
        } else {
            Err(CoreError::DimMismatch { expected: self.dim(), got: other.dim() })
        }
    }

    /// Elementwise sum. Inputs are unmodified.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector, CoreError> {
        self.check_dim(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ParamVector { data })
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector, CoreError> {
        self.check_dim(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector { data })
    }

    /// Scalar multiple.
    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector { data: self.data.iter().map(|a| a * factor).collect() }
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &ParamVector) -> Result<ParamVector, CoreError> {
        self.check_dim(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(ParamVector { data })
    }

    /// In-place `self += other`. Panics on dimension mismatch; reserved for
    /// call sites where equal dimensions hold by construction.
    pub(crate) fn add_assign(&mut self, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sum of squares in ascending index order.
    pub fn norm2_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> f64 {
        math::sqrt(self.norm2_sq())
    }

    /// Sum of absolute values in ascending index order.
    pub fn norm1(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub(crate) fn set_zero(&mut self) {
        for x in &mut self.data {
            *x = 0.0;
        }
    }
}

/// Seedable random stream. A `(seed, stream_id)` pair identifies the draw
/// sequence exactly, across runs and platforms, and distinct stream ids
/// from one seed are statistically independent, so per-worker streams do
/// not depend on scheduling order.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Rewinds the stream to its initial state.
    pub fn restart(&mut self) {
        *self = Self::new(self.seed, self.stream_id);
    }

    /// Uniform draw from `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    pub fn next_gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.rng.random_range(0..n)
    }

    /// Uniform in-place shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    /// `amount` distinct indices drawn from `0..length`, returned in
    /// ascending order so downstream reductions are order-stable.
    pub fn sample_indices(&mut self, length: usize, amount: usize) -> Vec<usize> {
        let mut picked = rand::seq::index::sample(&mut self.rng, length, amount).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// Vector of i.i.d. `N(0, std^2)` entries; deterministic given the stream
/// state. Always consumes `dim` draws, so noiseless (`std == 0`) and noisy
/// variants of one experiment stay stream-aligned.
pub fn gaussian_vector(rng: &mut RngStream, dim: usize, std: f64) -> ParamVector {
    assert!(std >= 0.0, "standard deviation must be non-negative");
    let data = (0..dim).map(|_| rng.next_gaussian() * std).collect();
    ParamVector { data }
}
