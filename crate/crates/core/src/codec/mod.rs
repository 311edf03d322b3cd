//! Presence index and count sketch codec.
//!
//! Wire layouts are fixed so that traffic accounting is exact:
//!
//! * [`Index`]: `ceil(n * width / 32)` little-endian `u32` words; position `p`
//!   occupies bits `[p * width, (p + 1) * width)` of the flat bit stream.
//! * [`CountSketch`]: `rows * buckets_per_row` little-endian `f32` values,
//!   row-major.

mod decode;
mod dump;
pub mod hash;
mod index;
mod sketch;

use thiserror::Error;

pub use decode::{estimation_decompress, peeling_decompress, DecodeResult};
pub use dump::{IndexDump, SketchDump};
pub use index::{Index, IndexWidth, Presence};
pub use sketch::{sketch_geometry, CountSketch, Ratio, SketchConfig, DEFAULT_ROWS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("a {ratio}x sketch with {rows} rows needs more than {n} positions")]
    SketchTooSmall { n: usize, ratio: u32, rows: usize },
    #[error("unsupported compression ratio {0} (expected 1, 2, 4 or 10)")]
    UnsupportedRatio(u32),
    #[error("ratio {0}x has no sketch; the codec is bypassed")]
    BypassHasNoSketch(u32),
    #[error("unsupported index width {0} (expected 1 or 4)")]
    UnsupportedWidth(u32),
    #[error("sketch needs at least one row")]
    NoRows,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("sketches are not addition-compatible")]
    IncompatibleSketch,
    #[error("presence set covers {index} positions but the sketch covers {sketch}")]
    GeometryMismatch { index: usize, sketch: usize },
    #[error("NaN at position {0}")]
    NotANumber(usize),
}
