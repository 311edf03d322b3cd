//! JSON debug dumps for golden tests.

use serde::{Deserialize, Serialize};

use super::{CountSketch, Index};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchDump {
    pub n: usize,
    pub ratio: u32,
    pub rows: usize,
    pub buckets_per_row: usize,
    pub seed: u64,
    /// One inner vector per row.
    pub buckets: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexDump {
    pub n: usize,
    pub width: u32,
    pub words: Vec<u32>,
    pub presence: Vec<usize>,
}

impl CountSketch {
    pub fn dump(&self) -> SketchDump {
        let cfg = self.config();
        SketchDump {
            n: cfg.n,
            ratio: cfg.ratio.factor(),
            rows: cfg.rows,
            buckets_per_row: cfg.buckets_per_row,
            seed: cfg.seed,
            buckets: self
                .values()
                .chunks(cfg.buckets_per_row)
                .map(<[f32]>::to_vec)
                .collect(),
        }
    }
}

impl Index {
    pub fn dump(&self) -> IndexDump {
        IndexDump {
            n: self.len(),
            width: self.width().bits(),
            words: self.words().to_vec(),
            presence: self.presence().positions().to_vec(),
        }
    }
}
