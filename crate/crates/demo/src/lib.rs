//! Browser bindings for three small interactive views of the codec: the
//! traffic model, peeling success across sparsity levels, and index merging.
//! Every function returns a JSON string.

use serde::Serialize;
use tagc::bench::{comm_report, roundtrip, RoundtripSpec, ValueKind};
use tagc::codec::{Index, IndexWidth, Ratio};
use tagc::collectives::{ExecMode, Traffic, World};
use tagc::hook::{CompressionConfig, TAG_INDEX};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(err)
}

fn config(width: u32, ratio: u32, theta: f64) -> Result<CompressionConfig, JsError> {
    let width = IndexWidth::try_from(width).map_err(err)?;
    let ratio = Ratio::try_from(ratio).map_err(err)?;
    Ok(CompressionConfig::new(theta, ratio, width))
}

/// Modelled and probed bits per parameter per rank, with the all-reduce
/// variant alongside.
#[wasm_bindgen]
pub fn comm_volume(
    width: u32,
    ratio: u32,
    theta: f64,
    world_size: usize,
) -> Result<String, JsError> {
    let mut c = config(width, ratio, theta)?;
    c.allow_below_table = true;
    let rows = comm_report(&[c], world_size, ExecMode::Sequential).map_err(err)?;
    to_json(&rows[0])
}

#[derive(Serialize)]
struct CurvePoint {
    theta: f64,
    support: usize,
    mean_peeled_fraction: f64,
    fully_peeled_trials: usize,
    max_abs_error: f64,
}

/// Mean peeled fraction at each sparsity level, from float-valued round
/// trips with a 4-bit index.
#[wasm_bindgen]
pub fn peel_curve(
    ratio: u32,
    n: usize,
    world_size: usize,
    trials: usize,
    seed: u64,
    thetas: Vec<f64>,
) -> Result<String, JsError> {
    let points = thetas
        .iter()
        .map(|&theta| {
            let mut c = config(4, ratio, theta)?.with_seed(seed);
            c.allow_below_table = true;
            let r = roundtrip(
                &RoundtripSpec {
                    config: c,
                    n,
                    world_size,
                    trials,
                    seed,
                    values: ValueKind::Float,
                },
                ExecMode::Sequential,
            )
            .map_err(err)?;
            Ok(CurvePoint {
                theta,
                support: r.support,
                mean_peeled_fraction: r.mean_peeled_fraction,
                fully_peeled_trials: r.fully_peeled_trials,
                max_abs_error: r.max_abs_error,
            })
        })
        .collect::<Result<Vec<_>, JsError>>()?;
    to_json(&points)
}

#[derive(Debug, Serialize)]
struct MergeView {
    fields: Vec<u32>,
    merged: Vec<usize>,
    truth: Vec<usize>,
    lost: Vec<usize>,
    spurious: Vec<usize>,
}

/// Merges per-rank presence patterns, one line of `0`/`1` characters per
/// rank, through a summing all-reduce of packed index words.
#[wasm_bindgen]
pub fn index_merge(width: u32, patterns: &str) -> Result<String, JsError> {
    to_json(&merge(width, patterns).map_err(err)?)
}

fn merge(width: u32, patterns: &str) -> Result<MergeView, String> {
    let width = IndexWidth::try_from(width).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f32>> = patterns
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| match c {
                    '0' => Ok(0.0),
                    '1' => Ok(1.0),
                    other => Err(format!("unexpected character {other:?}")),
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let n = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err("every rank needs a pattern of the same nonzero length".into());
    }
    let world = World::new(rows.len(), ExecMode::Sequential).map_err(|e| e.to_string())?;
    let locals = rows
        .iter()
        .map(|r| Index::create(r, width).into_words())
        .collect();
    let words = world
        .all_reduce_sum(locals, Traffic::new(TAG_INDEX, n))
        .map_err(|e| e.to_string())?
        .swap_remove(0);
    let merged = Index::from_words(n, width, words).map_err(|e| e.to_string())?;
    let presence = merged.presence();
    let truth: Vec<usize> = (0..n)
        .filter(|&p| rows.iter().any(|r| r[p] != 0.0))
        .collect();
    Ok(MergeView {
        fields: (0..n).map(|p| merged.field(p)).collect(),
        lost: truth
            .iter()
            .copied()
            .filter(|&p| !presence.contains(p))
            .collect(),
        spurious: presence
            .positions()
            .iter()
            .copied()
            .filter(|p| !truth.contains(p))
            .collect(),
        merged: presence.positions().to_vec(),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bit_carry_moves_a_position() {
        let v = merge(1, "1000\n1000").unwrap();
        assert_eq!(v.fields, [0, 1, 0, 0]);
        assert_eq!((v.lost, v.spurious), (vec![0], vec![1]));
        let v = merge(4, "1000\n1000").unwrap();
        assert_eq!(v.fields, [2, 0, 0, 0]);
        assert!(v.lost.is_empty() && v.spurious.is_empty());
    }

    #[test]
    fn ragged_patterns_are_rejected() {
        assert!(merge(4, "10\n1").is_err());
        assert!(merge(4, "1x").is_err());
        assert!(merge(2, "1").is_err());
    }

    #[test]
    fn volume_and_curve_serialize() {
        let v: serde_json::Value =
            serde_json::from_str(&comm_volume(1, 10, 98.75, 2).unwrap()).unwrap();
        assert_eq!(v["model"]["total_bits"], 5.2);
        assert_eq!(v["matches"], true);
        let c: serde_json::Value =
            serde_json::from_str(&peel_curve(2, 1000, 2, 3, 1, vec![50.0, 90.0]).unwrap()).unwrap();
        let c = c.as_array().unwrap();
        assert!(
            c[0]["mean_peeled_fraction"].as_f64().unwrap()
                < c[1]["mean_peeled_fraction"].as_f64().unwrap()
        );
    }
}
