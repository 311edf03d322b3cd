//! Seeded Monte-Carlo round trips and traffic probes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{IndexWidth, Ratio};
use crate::collectives::{ExecMode, World};
use crate::hook::{
    comm_volume_model, exchange_sparse, min_theta, shard_seed, CommVolume, CompressionConfig,
    SketchExchange, TAG_INDEX, TAG_SKETCH,
};
use crate::sparsifier::required_zeros;
use crate::Result;

/// Largest integer magnitude drawn per rank; sums stay exactly representable.
pub const INT_RANGE: i32 = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Small nonzero integers; exact sums are representable.
    #[default]
    Integer,
    /// Per-position sign shared by all ranks, magnitudes in `[0.5, 1)`.
    Float,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundtripSpec {
    pub config: CompressionConfig,
    pub n: usize,
    pub world_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub values: ValueKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub spec: RoundtripSpec,
    /// Present positions in the merged support of every trial.
    pub support: usize,
    pub mean_peeled_fraction: f64,
    pub min_peeled_fraction: f64,
    pub fully_peeled_trials: usize,
    pub unresolved_total: u64,
    /// Largest elementwise `|decoded - reference|` over all trials.
    pub max_abs_error: f64,
    /// Largest relative error over fully peeled trials.
    pub max_rel_error_peeled: f64,
    /// Fully peeled trials whose decode equals the reference bit for bit.
    pub exact_trials: usize,
    pub lost: u64,
    pub spurious: u64,
    pub collision_rate: f64,
    /// Empty when `theta` is below the operating point of the ratio.
    pub invariants: Vec<Invariant>,
}

impl RoundtripReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.pass)
    }
}

/// Per-rank sparse vectors whose merged support has exactly
/// `n - required_zeros(n, theta)` positions. Every support position is
/// nonzero on one designated rank and on each other rank with probability
/// one half.
pub fn sparse_inputs<R: Rng>(
    rng: &mut R,
    n: usize,
    world: usize,
    theta: f64,
    values: ValueKind,
) -> Vec<Vec<f32>> {
    let support = n - required_zeros(n, theta);
    let mut out = vec![vec![0.0f32; n]; world];
    let mut positions = sample(rng, n, support).into_vec();
    positions.sort_unstable();
    for p in positions {
        let lead = rng.random_range(0..world);
        let sign = if rng.random_bool(0.5) { 1.0f32 } else { -1.0 };
        for (r, v) in out.iter_mut().enumerate() {
            if r != lead && !rng.random_bool(0.5) {
                continue;
            }
            v[p] = match values {
                ValueKind::Integer => {
                    let m = rng.random_range(1..=INT_RANGE) as f32;
                    if rng.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                }
                ValueKind::Float => sign * rng.random_range(0.5f32..1.0),
            };
        }
    }
    out
}

/// Rank-ordered elementwise sum.
pub fn reference_sum(inputs: &[Vec<f32>]) -> Vec<f32> {
    let mut acc = inputs[0].clone();
    for v in &inputs[1..] {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    acc
}

pub fn roundtrip(spec: &RoundtripSpec, mode: ExecMode) -> Result<RoundtripReport> {
    spec.config.validate_for_world(spec.world_size)?;
    if spec.config.ratio.is_bypass() {
        return Err(
            crate::hook::ConfigError::Invalid("round trips need a sketch ratio".into()).into(),
        );
    }
    if spec.trials == 0 {
        return Err(
            crate::hook::ConfigError::Invalid("at least one trial is required".into()).into(),
        );
    }
    let world = World::new(spec.world_size, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let support = spec.n - required_zeros(spec.n, spec.config.theta);
    let mut peeled_sum = 0.0;
    let mut min_peeled = 1.0f64;
    let mut fully = 0;
    let mut exact = 0;
    let mut unresolved = 0;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut lost = 0;
    let mut spurious = 0;
    let mut true_support = 0;
    for t in 0..spec.trials {
        let inputs = sparse_inputs(
            &mut rng,
            spec.n,
            spec.world_size,
            spec.config.theta,
            spec.values,
        );
        let reference = reference_sum(&inputs);
        let owner = t % spec.world_size;
        let out = exchange_sparse(
            &world,
            &inputs,
            owner,
            &spec.config,
            shard_seed(spec.config.seed, t),
            SketchExchange::Reduce,
        )?;
        world.take_ledger();
        let decode = out.decode.as_ref().expect("sketch path decodes");
        let decoded = &decode.values;
        peeled_sum += decode.peeled_fraction;
        min_peeled = min_peeled.min(decode.peeled_fraction);
        unresolved += out.stats.unresolved;
        lost += out.stats.lost;
        spurious += out.stats.spurious;
        true_support += out.stats.true_support;
        for (d, r) in decoded.iter().zip(&reference) {
            max_abs = max_abs.max((*d as f64 - *r as f64).abs());
        }
        if decode.fully_peeled() {
            fully += 1;
            if decoded
                .iter()
                .zip(&reference)
                .all(|(d, r)| d.to_bits() == r.to_bits())
            {
                exact += 1;
            }
            for (d, r) in decoded.iter().zip(&reference) {
                if *r != 0.0 {
                    max_rel = max_rel.max(((*d as f64 - *r as f64) / *r as f64).abs());
                }
            }
        }
    }
    let mean = peeled_sum / spec.trials as f64;
    let mut invariants = Vec::new();
    if spec.config.theta >= min_theta(spec.config.ratio) {
        invariants.push(Invariant {
            name: "mean_peeled_fraction>=0.99".into(),
            pass: mean >= 0.99,
        });
        match spec.values {
            ValueKind::Integer => invariants.push(Invariant {
                name: "fully_peeled_integer_decode_is_exact".into(),
                pass: exact == fully,
            }),
            ValueKind::Float => invariants.push(Invariant {
                name: "fully_peeled_float_decode_within_1e-5".into(),
                pass: max_rel <= 1e-5,
            }),
        }
        if spec.config.index_width == IndexWidth::Four {
            invariants.push(Invariant {
                name: "four_bit_index_is_collision_free".into(),
                pass: lost == 0 && spurious == 0,
            });
        }
    }
    Ok(RoundtripReport {
        spec: spec.clone(),
        support,
        mean_peeled_fraction: mean,
        min_peeled_fraction: min_peeled,
        fully_peeled_trials: fully,
        unresolved_total: unresolved,
        max_abs_error: max_abs,
        max_rel_error_peeled: max_rel,
        exact_trials: exact,
        lost,
        spurious,
        collision_rate: if true_support == 0 {
            0.0
        } else {
            (lost + spurious) as f64 / true_support as f64
        },
        invariants,
    })
}

/// Parameters per probe exchange; divisible by every sketch geometry and
/// index word size in use, so nominal and measured figures coincide.
pub const PROBE_N: usize = 9600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommRow {
    pub theta: f64,
    pub ratio: Ratio,
    pub index_width: IndexWidth,
    pub model: CommVolume,
    pub lhc_model: CommVolume,
    /// Bits per parameter per rank recorded by the ledger of a probe exchange.
    pub measured: f64,
    pub lhc_measured: f64,
    pub matches: bool,
}

fn probe(
    config: &CompressionConfig,
    world_size: usize,
    mode: ExecMode,
    exchange: SketchExchange,
) -> Result<f64> {
    let world = World::new(world_size, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inputs = sparse_inputs(
        &mut rng,
        PROBE_N,
        world_size,
        config.theta,
        ValueKind::Integer,
    );
    exchange_sparse(&world, &inputs, 0, config, config.seed, exchange)?;
    let ledger = world.ledger();
    Ok(ledger.charged_bits(&[TAG_INDEX, TAG_SKETCH]) as f64 / PROBE_N as f64)
}

/// Modelled and measured traffic of each config at `world_size` ranks.
pub fn comm_report(
    configs: &[CompressionConfig],
    world_size: usize,
    mode: ExecMode,
) -> Result<Vec<CommRow>> {
    configs
        .iter()
        .map(|c| {
            c.validate_for_world(world_size)?;
            if c.ratio.is_bypass() {
                return Err(crate::hook::ConfigError::Invalid(
                    "traffic report needs a sketch ratio".into(),
                )
                .into());
            }
            let model = comm_volume_model(c, SketchExchange::Reduce);
            let lhc_model = comm_volume_model(c, SketchExchange::AllReduce);
            let measured = probe(c, world_size, mode, SketchExchange::Reduce)?;
            let lhc_measured = probe(c, world_size, mode, SketchExchange::AllReduce)?;
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
            Ok(CommRow {
                theta: c.theta,
                ratio: c.ratio,
                index_width: c.index_width,
                matches: close(measured, model.total_bits)
                    && close(lhc_measured, lhc_model.total_bits),
                model,
                lhc_model,
                measured,
                lhc_measured,
            })
        })
        .collect()
}

/// Rows as CSV with a fixed column order.
pub fn comm_report_csv(rows: &[CommRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "theta",
        "ratio",
        "index_width",
        "index_bits",
        "sketch_bits",
        "total_bits",
        "factor",
        "lhc_total_bits",
        "lhc_factor",
        "measured_bits",
        "lhc_measured_bits",
        "matches",
    ])
    .expect("in-memory csv");
    for r in rows {
        w.write_record([
            r.theta.to_string(),
            r.ratio.factor().to_string(),
            r.index_width.bits().to_string(),
            r.model.index_bits.to_string(),
            r.model.sketch_bits.to_string(),
            r.model.total_bits.to_string(),
            format!("{:.4}", r.model.factor),
            r.lhc_model.total_bits.to_string(),
            format!("{:.4}", r.lhc_model.factor),
            r.measured.to_string(),
            r.lhc_measured.to_string(),
            r.matches.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
