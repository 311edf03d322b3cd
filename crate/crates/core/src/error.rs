use thiserror::Error;

use crate::codec::CodecError;
use crate::collectives::CommError;
use crate::hook::ConfigError;
use crate::sparsifier::SparsifyError;
use crate::trainer::TrainError;

/// Umbrella error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sparsify(#[from] SparsifyError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("shard {shard}: expected {expected} per-rank inputs, got {actual}")]
    RankInputs {
        shard: usize,
        expected: usize,
        actual: usize,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
