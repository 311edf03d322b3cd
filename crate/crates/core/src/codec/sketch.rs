use serde::{Deserialize, Serialize};

use super::hash::{row_hashes, RowHash};
use super::CodecError;

/// Default number of hash rows per sketch.
pub const DEFAULT_ROWS: usize = 3;

/// Compression ratio of the sketch payload relative to dense 32-bit values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Ratio {
    /// No sketch; values travel dense.
    Bypass,
    X2,
    X4,
    X10,
}

impl Ratio {
    pub fn factor(self) -> u32 {
        match self {
            Ratio::Bypass => 1,
            Ratio::X2 => 2,
            Ratio::X4 => 4,
            Ratio::X10 => 10,
        }
    }

    pub fn is_bypass(self) -> bool {
        self == Ratio::Bypass
    }
}

impl TryFrom<u32> for Ratio {
    type Error = CodecError;

    fn try_from(factor: u32) -> Result<Self, Self::Error> {
        match factor {
            1 => Ok(Ratio::Bypass),
            2 => Ok(Ratio::X2),
            4 => Ok(Ratio::X4),
            10 => Ok(Ratio::X10),
            other => Err(CodecError::UnsupportedRatio(other)),
        }
    }
}

impl From<Ratio> for u32 {
    fn from(r: Ratio) -> u32 {
        r.factor()
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x", self.factor())
    }
}

/// Rows and buckets per row for an `n`-position vector at `ratio`, using
/// [`DEFAULT_ROWS`] rows.
pub fn sketch_geometry(n: usize, ratio: Ratio) -> Result<(usize, usize), CodecError> {
    geometry_with_rows(n, ratio, DEFAULT_ROWS)
}

fn geometry_with_rows(n: usize, ratio: Ratio, rows: usize) -> Result<(usize, usize), CodecError> {
    if ratio.is_bypass() {
        return Err(CodecError::BypassHasNoSketch(ratio.factor()));
    }
    if rows == 0 {
        return Err(CodecError::NoRows);
    }
    let buckets = n / (ratio.factor() as usize * rows);
    if buckets == 0 {
        return Err(CodecError::SketchTooSmall {
            n,
            ratio: ratio.factor(),
            rows,
        });
    }
    Ok((rows, buckets))
}

/// Everything two sketches must share to be added together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub n: usize,
    pub ratio: Ratio,
    pub rows: usize,
    pub buckets_per_row: usize,
    pub seed: u64,
}

impl SketchConfig {
    pub fn new(n: usize, ratio: Ratio, seed: u64) -> Result<Self, CodecError> {
        Self::with_rows(n, ratio, DEFAULT_ROWS, seed)
    }

    pub fn with_rows(n: usize, ratio: Ratio, rows: usize, seed: u64) -> Result<Self, CodecError> {
        let (rows, buckets_per_row) = geometry_with_rows(n, ratio, rows)?;
        Ok(Self {
            n,
            ratio,
            rows,
            buckets_per_row,
            seed,
        })
    }

    pub fn total_buckets(&self) -> usize {
        self.rows * self.buckets_per_row
    }

    pub fn row_hashes(&self) -> Vec<RowHash> {
        row_hashes(self.seed, self.rows)
    }

    pub fn payload_bits(&self) -> u64 {
        self.total_buckets() as u64 * 32
    }
}

/// `rows x buckets_per_row` signed-hash bucket array, row-major.
///
/// Bucket-wise addition of two sketches equals the sketch of the summed
/// vectors, which is what lets a plain sum-reduction carry them.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSketch {
    config: SketchConfig,
    values: Vec<f32>,
}

impl CountSketch {
    pub fn zeros(config: SketchConfig) -> Self {
        Self {
            values: vec![0.0; config.total_buckets()],
            config,
        }
    }

    /// Inserts every nonzero value: `bucket[r][h_r(p)] += s_r(p) * values[p]`.
    pub fn compress(values: &[f32], config: SketchConfig) -> Result<Self, CodecError> {
        if values.len() != config.n {
            return Err(CodecError::LengthMismatch {
                expected: config.n,
                actual: values.len(),
            });
        }
        let mut sketch = Self::zeros(config);
        let m = config.buckets_per_row;
        let hashes = config.row_hashes();
        for (p, &v) in values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (r, h) in hashes.iter().enumerate() {
                sketch.values[r * m + h.bucket(p, m)] += h.sign(p) * v;
            }
        }
        Ok(sketch)
    }

    /// Wraps a bucket array, e.g. one received from a reduction.
    pub fn from_values(config: SketchConfig, values: Vec<f32>) -> Result<Self, CodecError> {
        if values.len() != config.total_buckets() {
            return Err(CodecError::LengthMismatch {
                expected: config.total_buckets(),
                actual: values.len(),
            });
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn bucket(&self, row: usize, bucket: usize) -> f32 {
        self.values[row * self.config.buckets_per_row + bucket]
    }

    pub fn is_compatible(&self, other: &CountSketch) -> bool {
        self.config == other.config
    }

    /// Bucket-wise sum.
    pub fn sketch_add(&self, other: &CountSketch) -> Result<CountSketch, CodecError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &CountSketch) -> Result<(), CodecError> {
        if !self.is_compatible(other) {
            return Err(CodecError::IncompatibleSketch);
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
        Ok(())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(config: SketchConfig, bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != config.total_buckets() * 4 {
            return Err(CodecError::LengthMismatch {
                expected: config.total_buckets() * 4,
                actual: bytes.len(),
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { config, values })
    }
}
