use rand::Rng;
use sha2::{Digest, Sha256};

use super::model::Batch;
use super::TrainError;

static BUNDLED: &[u8] = include_bytes!("../../data/milton.txt");

/// Share of the text held out for validation, from the end.
pub const VAL_FRACTION: f64 = 0.1;

/// Byte-level text split into a training head and a validation tail.
#[derive(Clone, Debug)]
pub struct Corpus {
    bytes: &'static [u8],
    split: usize,
}

impl Corpus {
    pub fn bundled() -> Self {
        Self::from_static(BUNDLED).expect("bundled corpus is large enough")
    }

    pub fn from_static(bytes: &'static [u8]) -> Result<Self, TrainError> {
        let split = ((bytes.len() as f64) * (1.0 - VAL_FRACTION)) as usize;
        if split < 2 || bytes.len() - split < 2 {
            return Err(TrainError::Invalid("corpus too small to split".into()));
        }
        Ok(Self { bytes, split })
    }

    pub fn train(&self) -> &'static [u8] {
        &self.bytes[..self.split]
    }

    pub fn val(&self) -> &'static [u8] {
        &self.bytes[self.split..]
    }

    pub fn sha256(&self) -> String {
        Sha256::digest(self.bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `count` random training windows of `seq + 1` bytes.
    pub fn sample_train<R: Rng>(
        &self,
        rng: &mut R,
        count: usize,
        seq: usize,
    ) -> Result<Batch, TrainError> {
        let train = self.train();
        if seq + 1 > train.len() {
            return Err(TrainError::Invalid(format!(
                "sequence length {seq} exceeds the training text"
            )));
        }
        let windows: Vec<&[u8]> = (0..count)
            .map(|_| {
                let s = rng.random_range(0..=train.len() - seq - 1);
                &train[s..s + seq + 1]
            })
            .collect();
        Ok(Batch::from_windows(&windows))
    }

    /// `batches` fixed validation batches spread evenly over the held-out text.
    pub fn val_batches(
        &self,
        batches: usize,
        batch: usize,
        seq: usize,
    ) -> Result<Vec<Batch>, TrainError> {
        let val = self.val();
        if seq + 1 > val.len() {
            return Err(TrainError::Invalid(format!(
                "sequence length {seq} exceeds the validation text"
            )));
        }
        let total = batches * batch;
        let span = val.len() - seq - 1;
        let starts: Vec<usize> = (0..total).map(|i| i * span / total.max(1)).collect();
        Ok(starts
            .chunks(batch.max(1))
            .map(|c| {
                let w: Vec<&[u8]> = c.iter().map(|&s| &val[s..s + seq + 1]).collect();
                Batch::from_windows(&w)
            })
            .collect())
    }
}
