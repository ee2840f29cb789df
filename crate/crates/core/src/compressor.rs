//! q-deviate gradient compressors and their wire-size accounting.
//!
//! A compressor `C` is q-deviate when `||C(x) - x|| <= q ||x||` for every
//! `x`, with `0 <= q < 1`. Three compressors are provided:
//!
//! * `Identity` — no compression, `q^2 = 0`.
//! * `TopK` — keeps the `k` entries of largest magnitude, `q^2 = 1 - k/d`.
//! * `BlockSign` — per block, every coordinate becomes the coordinate's
//!   sign scaled by the block's mean absolute value;
//!   `q^2 = 1 - 1/max_block_len`.
//!
//! [`encoded_bits`] gives the closed-form uplink cost of one compressed
//! gradient, counting 32 bits per transmitted float.

use alloc::format;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::numerics::ParamVector;

/// Contiguous half-open index range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds spans of the given lengths laid out back to back from index 0.
pub fn spans_from_lens(lens: &[usize]) -> Vec<Span> {
    let mut spans = Vec::with_capacity(lens.len());
    let mut start = 0;
    for &len in lens {
        spans.push(Span::new(start, start + len));
        start += len;
    }
    spans
}

/// Checks that `spans` are nonempty, in order, disjoint and cover `[0, d)`
/// exactly once.
pub fn validate_cover(spans: &[Span], d: usize) -> Result<(), CoreError> {
    if spans.is_empty() {
        return Err(CoreError::InvalidSpec("block layout has no blocks".into()));
    }
    let mut cursor = 0;
    for (i, span) in spans.iter().enumerate() {
        if span.is_empty() {
            return Err(CoreError::InvalidSpec(format!("block {i} is empty")));
        }
        if span.start != cursor {
            return Err(CoreError::InvalidSpec(format!(
                "block {i} starts at {} but the previous block ends at {cursor}",
                span.start
            )));
        }
        cursor = span.end;
    }
    if cursor != d {
        return Err(CoreError::InvalidSpec(format!(
            "blocks cover [0, {cursor}) but the vector has dimension {d}"
        )));
    }
    Ok(())
}

/// How transmitted sparse coordinates are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccountingMode {
    /// 32 bits per kept value; index side channel is not charged.
    ValuesOnly,
    /// 32 bits per kept value plus a 32-bit index per kept value.
    ValuesPlusIndices,
}

/// Compressor choice with its parameters fully resolved for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressorSpec {
    Identity,
    TopK { k: usize },
    BlockSign { blocks: Vec<Span> },
}

/// Squared deviation factor `q^2` of a compressor; always in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationFactor {
    q_sq: f64,
}

impl DeviationFactor {
    pub fn q_sq(&self) -> f64 {
        self.q_sq
    }

    pub fn q(&self) -> f64 {
        math::sqrt(self.q_sq)
    }
}

impl CompressorSpec {
    /// Resolves a keep-ratio into a concrete `k = max(1, ceil(ratio * d))`.
    pub fn top_k_from_ratio(ratio: f64, d: usize) -> Result<Self, CoreError> {
        Ok(CompressorSpec::TopK { k: resolve_k(ratio, d)? })
    }

    /// Validates the spec against a vector dimension.
    pub fn validate(&self, d: usize) -> Result<(), CoreError> {
        match self {
            CompressorSpec::Identity => Ok(()),
            CompressorSpec::TopK { k } => {
                if *k >= 1 && *k <= d {
                    Ok(())
                } else {
                    Err(CoreError::InvalidSpec(format!(
                        "top-k needs 1 <= k <= {d}, got k = {k}"
                    )))
                }
            }
            CompressorSpec::BlockSign { blocks } => validate_cover(blocks, d),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, CompressorSpec::Identity)
    }
}

/// `k = max(1, ceil(ratio * d))` for a keep-ratio in `(0, 1]`.
pub fn resolve_k(ratio: f64, d: usize) -> Result<usize, CoreError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CoreError::InvalidSpec(format!(
            "top-k ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let k = math::ceil(ratio * d as f64) as usize;
    Ok(k.clamp(1, d))
}

/// Applies the compressor. The input is unmodified.
pub fn compress(spec: &CompressorSpec, x: &ParamVector) -> Result<ParamVector, CoreError> {
    let d = x.dim();
    spec.validate(d)?;
    match spec {
        CompressorSpec::Identity => Ok(x.clone()),
        CompressorSpec::TopK { k } => Ok(top_k(*k, x)),
        CompressorSpec::BlockSign { blocks } => Ok(block_sign(blocks, x)),
    }
}

fn top_k(k: usize, x: &ParamVector) -> ParamVector {
    let xs = x.as_slice();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    // Descending magnitude; ties keep the lower index.
    order.sort_unstable_by(|&a, &b| {
        xs[b].abs().total_cmp(&xs[a].abs()).then(a.cmp(&b))
    });
    let mut out = ParamVector::zeros(xs.len());
    for &i in order.iter().take(k) {
        out.as_mut_slice()[i] = xs[i];
    }
    out
}

fn block_sign(blocks: &[Span], x: &ParamVector) -> ParamVector {
    let xs = x.as_slice();
    let mut out = ParamVector::zeros(xs.len());
    for block in blocks {
        let sub = &xs[block.start..block.end];
        let scale = sub.iter().map(|v| v.abs()).sum::<f64>() / block.len() as f64;
        for (slot, &v) in out.as_mut_slice()[block.start..block.end].iter_mut().zip(sub) {
            // sign(0) := 0 keeps the zero vector a fixed point.
            *slot = if v > 0.0 {
                scale
            } else if v < 0.0 {
                -scale
            } else {
                0.0
            };
        }
    }
    out
}

/// Squared deviation factor of the compressor at dimension `d`.
pub fn deviation(spec: &CompressorSpec, d: usize) -> Result<DeviationFactor, CoreError> {
    spec.validate(d)?;
    let q_sq = match spec {
        CompressorSpec::Identity => 0.0,
        CompressorSpec::TopK { k } => 1.0 - (*k as f64) / (d as f64),
        CompressorSpec::BlockSign { blocks } => {
            let widest = blocks.iter().map(Span::len).max().unwrap_or(1);
            1.0 - 1.0 / widest as f64
        }
    };
    Ok(DeviationFactor { q_sq })
}

/// Closed-form uplink bits for one compressed gradient of dimension `d`,
/// at 32 bits per full-precision float.
pub fn encoded_bits(spec: &CompressorSpec, d: usize, mode: AccountingMode) -> u64 {
    let d64 = d as u64;
    match spec {
        CompressorSpec::Identity => 32 * d64,
        CompressorSpec::TopK { k } => {
            let k64 = *k as u64;
            match mode {
                AccountingMode::ValuesOnly => 32 * k64,
                AccountingMode::ValuesPlusIndices => 64 * k64,
            }
        }
        // One sign bit per coordinate plus a 32-bit scale per block.
        CompressorSpec::BlockSign { blocks } => d64 + 32 * blocks.len() as u64,
    }
}
