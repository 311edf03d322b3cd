use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ConfigError, LayerSpec};

/// Compressed shards shorter than this travel on the baseline path.
pub const MIN_COMPRESSED_SHARD: usize = 1024;

/// Part of one layer inside a shard, in flat parameter coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: usize,
    pub range: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardSpec {
    pub id: usize,
    pub unit: usize,
    /// Rank that receives the reduced gradient for this shard.
    pub owner: usize,
    pub range: Range<usize>,
    pub segments: Vec<Segment>,
}

impl ShardSpec {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// A contiguous run of layers exchanged together, split into one shard per
/// rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub id: usize,
    pub range: Range<usize>,
    pub compressed: bool,
    pub shards: Vec<ShardSpec>,
}

impl Unit {
    /// Slot length of the zero-padded buffer used by reduce-scatter.
    pub fn slot_len(&self) -> usize {
        self.shards.iter().map(ShardSpec::len).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub world_size: usize,
    pub total_params: usize,
    pub units: Vec<Unit>,
}

impl ShardPlan {
    /// Every flagged layer large enough to give each rank at least
    /// [`MIN_COMPRESSED_SHARD`] parameters becomes its own compressed unit;
    /// maximal runs of the remaining layers become baseline units.
    pub fn new(
        layers: &[LayerSpec],
        flags: &[bool],
        world_size: usize,
    ) -> Result<Self, ConfigError> {
        if world_size == 0 {
            return Err(ConfigError::WorldSize);
        }
        if flags.len() != layers.len() {
            return Err(ConfigError::Invalid(format!(
                "{} compression flags for {} layers",
                flags.len(),
                layers.len()
            )));
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        offsets.push(0usize);
        for l in layers {
            if l.parameter_count == 0 {
                return Err(ConfigError::EmptyLayer(l.name.clone()));
            }
            offsets.push(offsets.last().unwrap() + l.parameter_count);
        }
        let total_params = *offsets.last().unwrap();

        let mut groups: Vec<(Range<usize>, bool)> = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            let compressed = flags[i] && l.parameter_count / world_size >= MIN_COMPRESSED_SHARD;
            match groups.last_mut() {
                Some((r, false)) if !compressed => r.end = i + 1,
                _ => groups.push((i..i + 1, compressed)),
            }
        }

        let units = groups
            .into_iter()
            .enumerate()
            .map(|(u, (layer_range, compressed))| {
                let range = offsets[layer_range.start]..offsets[layer_range.end];
                let shards = split(range.clone(), world_size)
                    .into_iter()
                    .enumerate()
                    .map(|(d, r)| ShardSpec {
                        id: u * world_size + d,
                        unit: u,
                        owner: d,
                        segments: layer_range
                            .clone()
                            .filter_map(|li| {
                                let s = offsets[li].max(r.start);
                                let e = offsets[li + 1].min(r.end);
                                (s < e).then_some(Segment {
                                    layer: li,
                                    range: s..e,
                                })
                            })
                            .collect(),
                        range: r,
                    })
                    .collect();
                Unit {
                    id: u,
                    range,
                    compressed,
                    shards,
                }
            })
            .collect();
        Ok(Self {
            world_size,
            total_params,
            units,
        })
    }

    pub fn shards(&self) -> impl Iterator<Item = &ShardSpec> {
        self.units.iter().flat_map(|u| u.shards.iter())
    }

    pub fn compressed_params(&self) -> usize {
        self.units
            .iter()
            .filter(|u| u.compressed)
            .map(Unit::len)
            .sum()
    }
}

/// Balanced contiguous split; lengths differ by at most one.
fn split(range: Range<usize>, parts: usize) -> Vec<Range<usize>> {
    let len = range.len();
    (0..parts)
        .map(|d| range.start + d * len / parts..range.start + (d + 1) * len / parts)
        .collect()
}
