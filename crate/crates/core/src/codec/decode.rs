use std::collections::VecDeque;

use super::hash::RowHash;
use super::{CodecError, CountSketch, Presence};

/// Output of [`peeling_decompress`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub values: Vec<f32>,
    /// Present positions filled by estimation, ascending.
    pub unresolved: Vec<usize>,
    /// Share of present positions recovered by peeling; 1.0 for an empty set.
    pub peeled_fraction: f64,
}

impl DecodeResult {
    pub fn fully_peeled(&self) -> bool {
        self.unresolved.is_empty()
    }
}

fn check_geometry(presence: &Presence, sketch: &CountSketch) -> Result<(), CodecError> {
    if presence.universe() != sketch.config().n {
        return Err(CodecError::GeometryMismatch {
            index: presence.universe(),
            sketch: sketch.config().n,
        });
    }
    Ok(())
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

fn estimate(
    hashes: &[RowHash],
    m: usize,
    buckets: &[f64],
    p: usize,
    scratch: &mut Vec<f64>,
) -> f64 {
    scratch.clear();
    scratch.extend(
        hashes
            .iter()
            .enumerate()
            .map(|(r, h)| h.sign(p) as f64 * buckets[r * m + h.bucket(p, m)]),
    );
    median(scratch)
}

fn to_f32(v: f64) -> f32 {
    let v = v as f32;
    // Normalise -0.0 so decoded zeros compare bit-equal with reference sums.
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Median-of-rows count-sketch estimate for each target position.
///
/// Targets should be a subset of `presence`; the estimate for a position that
/// never entered the sketch is whatever collides with it.
pub fn estimation_decompress(
    presence: &Presence,
    sketch: &CountSketch,
    targets: &[usize],
) -> Result<Vec<f32>, CodecError> {
    check_geometry(presence, sketch)?;
    debug_assert!(targets.iter().all(|&p| presence.contains(p)));
    let cfg = sketch.config();
    let hashes = cfg.row_hashes();
    let buckets: Vec<f64> = sketch.values().iter().map(|&v| v as f64).collect();
    let mut scratch = Vec::with_capacity(cfg.rows);
    Ok(targets
        .iter()
        .map(|&p| {
            to_f32(estimate(
                &hashes,
                cfg.buckets_per_row,
                &buckets,
                p,
                &mut scratch,
            ))
        })
        .collect())
}

/// Conjugate-gradient iterations of the post-peeling least-squares fit.
const REFINE_ITERATIONS: usize = 64;

/// CGLS on the rows of buckets with no unresolved member, starting from the
/// peeled values. `work` holds the bucket residuals and is kept in step.
fn refine(
    x: &mut [f64],
    recovered: &[bool],
    slots: &[usize],
    signs: &[f64],
    count: &[u32],
    work: &mut [f64],
    k: usize,
) {
    let items = x.len();
    let usable = |i: usize, r: usize| recovered[i] && count[slots[i * k + r]] == 0;
    let at = |v: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend((0..items).map(|i| {
            (0..k)
                .filter(|&r| usable(i, r))
                .map(|r| signs[i * k + r] * v[slots[i * k + r]])
                .sum::<f64>()
        }));
    };
    let mut s = Vec::with_capacity(items);
    at(work, &mut s);
    let mut gamma: f64 = s.iter().map(|v| v * v).sum();
    if gamma == 0.0 {
        return;
    }
    let stop = gamma * 1e-12;
    let mut p = s.clone();
    let mut q = vec![0.0f64; work.len()];
    for _ in 0..REFINE_ITERATIONS {
        q.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..items {
            for r in 0..k {
                if usable(i, r) {
                    q[slots[i * k + r]] += signs[i * k + r] * p[i];
                }
            }
        }
        let qq: f64 = q.iter().map(|v| v * v).sum();
        if qq == 0.0 {
            return;
        }
        let alpha = gamma / qq;
        for i in 0..items {
            x[i] += alpha * p[i];
        }
        for (w, v) in work.iter_mut().zip(&q) {
            *w -= alpha * v;
        }
        at(work, &mut s);
        let next: f64 = s.iter().map(|v| v * v).sum();
        if next <= stop {
            return;
        }
        let beta = next / gamma;
        gamma = next;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
    }
}

/// Recovers the values of every present position from a reduced sketch.
///
/// Buckets whose remaining contributor set holds exactly one position are
/// peeled in a fixed order: all initial singletons in ascending
/// `(row, bucket)` order, then newly created singletons first-in first-out.
/// Contributor sets are tracked as a count plus the XOR of member ids, which
/// identifies the member once the count reaches one. Positions left when no
/// singleton remains are estimated from the partially peeled buckets.
/// Subtraction runs in `f64`, so integer-valued inputs decode exactly.
pub fn peeling_decompress(
    presence: &Presence,
    sketch: &CountSketch,
) -> Result<DecodeResult, CodecError> {
    check_geometry(presence, sketch)?;
    let cfg = sketch.config();
    let n = cfg.n;
    let (k, m) = (cfg.rows, cfg.buckets_per_row);
    let positions = presence.positions();
    let mut values = vec![0.0f32; n];
    if positions.is_empty() {
        return Ok(DecodeResult {
            values,
            unresolved: Vec::new(),
            peeled_fraction: 1.0,
        });
    }

    let hashes = cfg.row_hashes();
    let mut slots = Vec::with_capacity(positions.len() * k);
    let mut signs = Vec::with_capacity(positions.len() * k);
    let mut count = vec![0u32; k * m];
    let mut members = vec![0usize; k * m];
    for (item, &p) in positions.iter().enumerate() {
        for (r, h) in hashes.iter().enumerate() {
            let b = r * m + h.bucket(p, m);
            slots.push(b);
            signs.push(h.sign(p) as f64);
            count[b] += 1;
            members[b] ^= item;
        }
    }

    let mut work: Vec<f64> = sketch.values().iter().map(|&v| v as f64).collect();
    let mut queue: VecDeque<usize> = (0..k * m).filter(|&b| count[b] == 1).collect();
    let mut recovered = vec![false; positions.len()];
    let mut exact = vec![0.0f64; positions.len()];
    let mut peeled = 0usize;

    while let Some(b) = queue.pop_front() {
        if count[b] != 1 {
            continue;
        }
        let item = members[b];
        let row = b / m;
        let value = signs[item * k + row] * work[b];
        exact[item] = value;
        recovered[item] = true;
        peeled += 1;
        for r in 0..k {
            let slot = slots[item * k + r];
            work[slot] -= signs[item * k + r] * value;
            count[slot] -= 1;
            members[slot] ^= item;
            if count[slot] == 1 {
                queue.push_back(slot);
            }
        }
    }

    // Peeling chains pass each bucket's rounding on to later positions; a
    // least-squares fit over the fully peeled buckets spreads it across all
    // rows instead. Exact inputs leave zero residuals and are not touched.
    refine(&mut exact, &recovered, &slots, &signs, &count, &mut work, k);
    for (item, &p) in positions.iter().enumerate() {
        if recovered[item] {
            values[p] = to_f32(exact[item]);
        }
    }

    let mut unresolved = Vec::new();
    let mut scratch = Vec::with_capacity(k);
    for (item, &p) in positions.iter().enumerate() {
        if !recovered[item] {
            values[p] = to_f32(estimate(&hashes, m, &work, p, &mut scratch));
            unresolved.push(p);
        }
    }

    Ok(DecodeResult {
        values,
        unresolved,
        peeled_fraction: peeled as f64 / positions.len() as f64,
    })
}
