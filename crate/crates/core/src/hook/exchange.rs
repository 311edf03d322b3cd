use serde::{Deserialize, Serialize};

use super::{CompressionConfig, ShardSpec, Unit};
use crate::codec::{
    peeling_decompress, CountSketch, DecodeResult, Index, IndexWidth, Presence, SketchConfig,
};
use crate::collectives::{Traffic, World};
use crate::sparsifier::{apply_accumulator, sparsify, ResidualAccumulator};
use crate::{Error, Result};

pub const TAG_INDEX: &str = "index";
pub const TAG_SKETCH: &str = "sketch";
pub const TAG_DENSE: &str = "dense";
pub const TAG_BASELINE: &str = "baseline";
pub const TAG_PARAMS: &str = "params";

/// Collective carrying the reduced sketch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchExchange {
    /// Reduce to the shard owner.
    #[default]
    Reduce,
    /// All-Reduce to every rank, as a sketch-only compressor without shard
    /// awareness would do.
    AllReduce,
}

/// Decode and collision counters, summed over exchanges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeStats {
    pub exchanges: u64,
    pub positions: u64,
    /// Positions nonzero on at least one rank.
    pub true_support: u64,
    /// Positions marked present by the merged index.
    pub merged_support: u64,
    pub lost: u64,
    pub spurious: u64,
    pub peeled: u64,
    pub unresolved: u64,
    /// Exchanges whose decode resolved every present position by peeling.
    pub fully_peeled: u64,
}

impl ExchangeStats {
    pub fn merge(&mut self, o: &ExchangeStats) {
        self.exchanges += o.exchanges;
        self.positions += o.positions;
        self.true_support += o.true_support;
        self.merged_support += o.merged_support;
        self.lost += o.lost;
        self.spurious += o.spurious;
        self.peeled += o.peeled;
        self.unresolved += o.unresolved;
        self.fully_peeled += o.fully_peeled;
    }

    pub fn peeled_fraction(&self) -> f64 {
        let total = self.peeled + self.unresolved;
        if total == 0 {
            1.0
        } else {
            self.peeled as f64 / total as f64
        }
    }

    /// Index corruption per truly present position.
    pub fn collision_rate(&self) -> f64 {
        if self.true_support == 0 {
            0.0
        } else {
            (self.lost + self.spurious) as f64 / self.true_support as f64
        }
    }
}

/// Result of one shard exchange. `outputs[r]` is `Some` only for the owner.
#[derive(Clone, Debug, PartialEq)]
pub struct ShardExchange {
    pub outputs: Vec<Option<Vec<f32>>>,
    pub decode: Option<DecodeResult>,
    pub stats: ExchangeStats,
}

impl ShardExchange {
    pub fn owner_output(&self) -> Option<&[f32]> {
        self.outputs.iter().flatten().next().map(Vec::as_slice)
    }
}

/// Hash seed of a shard's sketch; every rank derives the same value.
pub fn shard_seed(seed: u64, shard_id: usize) -> u64 {
    let mut z = seed ^ (shard_id as u64).wrapping_mul(0xA076_1D64_78BD_642F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_inputs<T>(shard: usize, world: &World, inputs: &[T]) -> Result<()> {
    if inputs.len() != world.size() {
        return Err(Error::RankInputs {
            shard,
            expected: world.size(),
            actual: inputs.len(),
        });
    }
    Ok(())
}

/// Index and sketch exchange of per-rank vectors that are already sparse.
/// The owner decodes by peeling with estimation fallback.
pub fn exchange_sparse(
    world: &World,
    sparse: &[Vec<f32>],
    owner: usize,
    config: &CompressionConfig,
    seed: u64,
    exchange: SketchExchange,
) -> Result<ShardExchange> {
    check_inputs(owner, world, sparse)?;
    let n = sparse[0].len();
    let width = config.index_width;
    if width == IndexWidth::Four {
        world.check_nibble_capacity()?;
    }

    let locals = world.map_ranks(|r| Index::create(&sparse[r], width).into_words());
    let merged = world.all_reduce_sum(locals, Traffic::new(TAG_INDEX, n))?;
    let merged = Index::from_words(n, width, merged.into_iter().nth(owner).unwrap_or_default())?;
    let presence = merged.presence();

    let sketch_config = SketchConfig::with_rows(n, config.ratio, config.rows, seed)?;
    let sketches = world.map_ranks(|r| {
        CountSketch::compress(&sparse[r], sketch_config).map(CountSketch::into_values)
    });
    let sketches = sketches
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let reduced = match exchange {
        SketchExchange::Reduce => {
            world.reduce(sketches, owner, Traffic::new(TAG_SKETCH, n))?[owner].take()
        }
        SketchExchange::AllReduce => world
            .all_reduce_sum(sketches, Traffic::new(TAG_SKETCH, n))?
            .into_iter()
            .nth(owner),
    }
    .unwrap_or_default();
    let reduced = CountSketch::from_values(sketch_config, reduced)?;
    let decode = peeling_decompress(&presence, &reduced)?;

    let truth = union_support(sparse);
    let (lost, spurious) = presence.diff_counts(&truth);
    let unresolved = decode.unresolved.len() as u64;
    let stats = ExchangeStats {
        exchanges: 1,
        positions: n as u64,
        true_support: truth.len() as u64,
        merged_support: presence.len() as u64,
        lost: lost as u64,
        spurious: spurious as u64,
        peeled: presence.len() as u64 - unresolved,
        unresolved,
        fully_peeled: decode.fully_peeled() as u64,
    };
    let mut outputs = vec![None; world.size()];
    outputs[owner] = Some(decode.values.clone());
    Ok(ShardExchange {
        outputs,
        decode: Some(decode),
        stats,
    })
}

fn union_support(vectors: &[Vec<f32>]) -> Presence {
    let n = vectors.first().map_or(0, Vec::len);
    let positions = (0..n)
        .filter(|&p| vectors.iter().any(|v| v[p] != 0.0))
        .collect();
    Presence::from_positions(n, positions)
}

/// One compressed exchange of a shard: accumulate, sparsify, exchange index
/// and sketch, decode on the owner. `accumulators` are replaced with the new
/// residuals.
///
/// With a bypass ratio the sparse vectors are reduced dense to the owner.
pub fn tagc_reduce_shard(
    world: &World,
    shard: &ShardSpec,
    grads: &[Vec<f32>],
    accumulators: &mut [ResidualAccumulator],
    config: &CompressionConfig,
    exchange: SketchExchange,
) -> Result<ShardExchange> {
    check_inputs(shard.id, world, grads)?;
    check_inputs(shard.id, world, accumulators)?;
    if let Some((rank, g)) = grads
        .iter()
        .enumerate()
        .find(|(_, g)| g.len() != shard.len())
    {
        return Err(crate::collectives::CommError::LengthMismatch {
            rank,
            expected: shard.len(),
            actual: g.len(),
        }
        .into());
    }
    let split = world.map_ranks(|r| {
        let input = apply_accumulator(&grads[r], &accumulators[r])?;
        sparsify(&input, config.theta)
    });
    let mut sparse = Vec::with_capacity(split.len());
    for (acc, s) in accumulators.iter_mut().zip(split) {
        let s = s?;
        *acc = ResidualAccumulator::from_values(s.residual);
        sparse.push(s.sparse);
    }

    if config.ratio.is_bypass() {
        let outputs = world.reduce(sparse, shard.owner, Traffic::new(TAG_DENSE, shard.len()))?;
        return Ok(ShardExchange {
            outputs,
            decode: None,
            stats: ExchangeStats {
                exchanges: 1,
                positions: shard.len() as u64,
                ..ExchangeStats::default()
            },
        });
    }
    exchange_sparse(
        world,
        &sparse,
        shard.owner,
        config,
        shard_seed(config.seed, shard.id),
        exchange,
    )
}

/// Uncompressed 32-bit reduction of one shard to its owner.
pub fn baseline_reduce_shard(
    world: &World,
    shard: &ShardSpec,
    grads: &[Vec<f32>],
) -> Result<Vec<Option<Vec<f32>>>> {
    check_inputs(shard.id, world, grads)?;
    Ok(world.reduce(
        grads.to_vec(),
        shard.owner,
        Traffic::new(TAG_BASELINE, shard.len()),
    )?)
}

/// Uncompressed reduce-scatter of a whole unit. `grads[r]` covers the unit;
/// rank `r` receives the summed slice of the shard it owns.
pub fn baseline_reduce_unit(
    world: &World,
    unit: &Unit,
    grads: &[Vec<f32>],
) -> Result<Vec<Vec<f32>>> {
    check_inputs(unit.id, world, grads)?;
    let slot = unit.slot_len();
    let base = unit.range.start;
    let padded = grads
        .iter()
        .enumerate()
        .map(|(rank, g)| {
            if g.len() != unit.len() {
                return Err(crate::collectives::CommError::LengthMismatch {
                    rank,
                    expected: unit.len(),
                    actual: g.len(),
                });
            }
            let mut buf = vec![0.0f32; slot * unit.shards.len()];
            for (d, s) in unit.shards.iter().enumerate() {
                buf[d * slot..d * slot + s.len()]
                    .copy_from_slice(&g[s.range.start - base..s.range.end - base]);
            }
            Ok(buf)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut out = world.reduce_scatter(padded, Traffic::new(TAG_BASELINE, unit.len()))?;
    for (d, s) in unit.shards.iter().enumerate() {
        out[d].truncate(s.len());
    }
    Ok(out)
}
