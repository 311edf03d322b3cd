//! Per-shard compressed gradient exchange and the layer-selective policy
//! that decides which parameters use it.

mod config;
mod exchange;
mod layers;
mod shard;
mod volume;

pub use config::{
    min_theta, CompressionConfig, ConfigError, ExchangeConfig, LayerPolicy, OPERATING_POINTS,
};
pub use exchange::{
    baseline_reduce_shard, baseline_reduce_unit, exchange_sparse, shard_seed, tagc_reduce_shard,
    ExchangeStats, ShardExchange, SketchExchange, TAG_BASELINE, TAG_DENSE, TAG_INDEX, TAG_PARAMS,
    TAG_SKETCH,
};
pub use layers::{
    classification_report, classify_layers, ClassificationReport, KindShare, LayerDecision,
    LayerKind, LayerSpec,
};
pub use shard::{Segment, ShardPlan, ShardSpec, Unit, MIN_COMPRESSED_SHARD};
pub use volume::{comm_volume_model, segment_charged_bits, CommVolume, SegmentBits, BASELINE_BITS};
