use serde::{Deserialize, Serialize};

use super::{CompressionConfig, SketchExchange};
use crate::codec::{Index, SketchConfig};
use crate::collectives::CollectiveKind;
use crate::Result;

/// Bits per parameter per rank of the uncompressed exchange.
pub const BASELINE_BITS: f64 = 32.0;

/// Modelled traffic per parameter per rank.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommVolume {
    pub index_bits: f64,
    pub sketch_bits: f64,
    pub total_bits: f64,
    /// `BASELINE_BITS / total_bits`.
    pub factor: f64,
}

impl CommVolume {
    fn new(index_bits: f64, sketch_bits: f64) -> Self {
        let total_bits = index_bits + sketch_bits;
        Self {
            index_bits,
            sketch_bits,
            total_bits,
            factor: BASELINE_BITS / total_bits,
        }
    }
}

fn sketch_factor(exchange: SketchExchange) -> f64 {
    match exchange {
        SketchExchange::Reduce => CollectiveKind::Reduce.cost_factor() as f64,
        SketchExchange::AllReduce => CollectiveKind::AllReduce.cost_factor() as f64,
    }
}

/// Nominal volume for a compressed layer: the index is all-reduced and the
/// sketch, `32 / ratio` bits per parameter, goes through `exchange`. The
/// per-rank figures do not depend on the world size under this cost model.
pub fn comm_volume_model(config: &CompressionConfig, exchange: SketchExchange) -> CommVolume {
    if config.ratio.is_bypass() {
        return CommVolume::new(0.0, BASELINE_BITS);
    }
    let index = CollectiveKind::AllReduce.cost_factor() as f64 * config.index_width.bits() as f64;
    let sketch = sketch_factor(exchange) * BASELINE_BITS / config.ratio.factor() as f64;
    CommVolume::new(index, sketch)
}

/// Exact charged bits of one compressed exchange of `n` parameters,
/// including word padding of the index and the floor in the sketch geometry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentBits {
    pub index: u64,
    pub sketch: u64,
}

pub fn segment_charged_bits(
    n: usize,
    config: &CompressionConfig,
    exchange: SketchExchange,
) -> Result<SegmentBits> {
    if config.ratio.is_bypass() {
        return Ok(SegmentBits {
            index: 0,
            sketch: CollectiveKind::Reduce.cost_factor() * 32 * n as u64,
        });
    }
    let words = Index::word_count(n, config.index_width) as u64;
    let sketch = SketchConfig::with_rows(n, config.ratio, config.rows, 0)?;
    Ok(SegmentBits {
        index: CollectiveKind::AllReduce.cost_factor() * 32 * words,
        sketch: sketch_factor(exchange) as u64 * sketch.payload_bits(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{IndexWidth, Ratio};

    #[test]
    fn nominal_points() {
        let v = comm_volume_model(
            &CompressionConfig::new(98.75, Ratio::X10, IndexWidth::One),
            SketchExchange::Reduce,
        );
        assert!((v.total_bits - 5.2).abs() < 1e-12);
        assert!((v.factor - 6.15).abs() < 0.005);
        let c = CompressionConfig::new(80.0, Ratio::X2, IndexWidth::Four);
        assert_eq!(
            comm_volume_model(&c, SketchExchange::Reduce).total_bits,
            24.0
        );
        assert_eq!(
            comm_volume_model(&c, SketchExchange::AllReduce).total_bits,
            40.0
        );
        let c = CompressionConfig::new(80.0, Ratio::X2, IndexWidth::One);
        assert_eq!(
            comm_volume_model(&c, SketchExchange::Reduce).total_bits,
            18.0
        );
        assert_eq!(
            comm_volume_model(&c, SketchExchange::AllReduce).total_bits,
            34.0
        );
        let v = comm_volume_model(
            &CompressionConfig::new(98.75, Ratio::X10, IndexWidth::Four),
            SketchExchange::Reduce,
        );
        assert!((v.total_bits - 11.2).abs() < 1e-12);
        assert!((v.factor - 2.857).abs() < 1e-3);
        assert_eq!(
            comm_volume_model(&CompressionConfig::bypass(), SketchExchange::Reduce).factor,
            1.0
        );
    }

    #[test]
    fn exact_bits_match_nominal_on_divisible_lengths() {
        let n = 9600;
        for (theta, ratio) in super::super::OPERATING_POINTS {
            for width in [IndexWidth::One, IndexWidth::Four] {
                for ex in [SketchExchange::Reduce, SketchExchange::AllReduce] {
                    let c = CompressionConfig::new(theta, ratio, width);
                    let b = segment_charged_bits(n, &c, ex).unwrap();
                    let v = comm_volume_model(&c, ex);
                    let predicted = v.total_bits * n as f64;
                    assert!(
                        (predicted - (b.index + b.sketch) as f64).abs() < 1e-6,
                        "{predicted} vs {b:?}"
                    );
                }
            }
        }
    }
}
