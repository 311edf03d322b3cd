//! Magnitude sparsification with local accumulation of the discarded values.
//!
//! `sparsify` zeroes at least `theta` percent of the entries, choosing the
//! smallest magnitudes. Every entry is copied whole into exactly one of the
//! two outputs, so `sparse + residual` reproduces the input bit for bit.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparsifyError {
    #[error("sparsification threshold {0} is outside [0, 100]")]
    ThetaOutOfRange(f64),
    #[error("cannot sparsify an empty vector")]
    Empty,
    #[error("NaN at position {0}")]
    NotANumber(usize),
    #[error("length mismatch: gradient has {gradient} entries, accumulator {accumulator}")]
    LengthMismatch { gradient: usize, accumulator: usize },
}

/// Per-rank carry of sparsified-away gradient values, zero at training start.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualAccumulator {
    values: Vec<f32>,
}

impl ResidualAccumulator {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn from_values(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `g + acc`, elementwise.
pub fn apply_accumulator(g: &[f32], acc: &ResidualAccumulator) -> Result<Vec<f32>, SparsifyError> {
    if g.len() != acc.len() {
        return Err(SparsifyError::LengthMismatch {
            gradient: g.len(),
            accumulator: acc.len(),
        });
    }
    Ok(g.iter().zip(acc.values()).map(|(a, b)| a + b).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sparsified {
    pub sparse: Vec<f32>,
    pub residual: Vec<f32>,
    /// Largest magnitude that was zeroed (`0.0` when nothing was selected).
    pub threshold: f32,
}

impl Sparsified {
    pub fn zero_count(&self) -> usize {
        self.sparse.iter().filter(|&&v| v == 0.0).count()
    }
}

/// Number of entries that must be zeroed: `ceil(theta * n / 100)`.
pub fn required_zeros(n: usize, theta: f64) -> usize {
    // The epsilon keeps exactly representable products such as 98.75% of 10^4
    // from rounding up past the intended count.
    let raw = theta * n as f64 / 100.0;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// The `count`-th smallest magnitude, found by selection rather than sorting.
pub fn magnitude_threshold(g: &[f32], count: usize) -> f32 {
    if count == 0 {
        return 0.0;
    }
    let mut mags: Vec<f32> = g.iter().map(|v| v.abs()).collect();
    let (_, nth, _) = mags.select_nth_unstable_by(count - 1, f32::total_cmp);
    *nth
}

pub fn sparsify(g: &[f32], theta: f64) -> Result<Sparsified, SparsifyError> {
    if !(0.0..=100.0).contains(&theta) {
        return Err(SparsifyError::ThetaOutOfRange(theta));
    }
    if g.is_empty() {
        return Err(SparsifyError::Empty);
    }
    if let Some(p) = g.iter().position(|v| v.is_nan()) {
        return Err(SparsifyError::NotANumber(p));
    }
    let count = required_zeros(g.len(), theta);
    if count == 0 {
        return Ok(Sparsified {
            sparse: g.to_vec(),
            residual: vec![0.0; g.len()],
            threshold: 0.0,
        });
    }
    let threshold = magnitude_threshold(g, count);
    let mut sparse = vec![0.0f32; g.len()];
    let mut residual = vec![0.0f32; g.len()];
    for (p, &v) in g.iter().enumerate() {
        if v.abs() <= threshold {
            residual[p] = v;
        } else {
            sparse[p] = v;
        }
    }
    Ok(Sparsified {
        sparse,
        residual,
        threshold,
    })
}
