//! Seeded multiply-shift hash family.
//!
//! Every endpoint of an exchange must evaluate exactly these functions, so the
//! derivation below is part of the wire format:
//!
//! * per row `r`, a splitmix64 stream is started at
//!   `seed ^ ((r + 1) * 0x9E3779B97F4A7C15)` and four words are drawn in order:
//!   `pos_mul | 1`, `pos_add`, `sign_mul | 1`, `sign_add`;
//! * bucket: `hi = (pos_mul * p + pos_add) >> 32` (wrapping 64-bit), then
//!   `bucket = (hi * m) >> 32`;
//! * sign: `+1` when the top bit of `sign_mul * p + sign_add` is 0, else `-1`.
//!
//! Positions and bucket counts must fit in 32 bits.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Position and sign hash for one sketch row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowHash {
    pos_mul: u64,
    pos_add: u64,
    sign_mul: u64,
    sign_add: u64,
}

impl RowHash {
    pub fn new(seed: u64, row: usize) -> Self {
        let mut state = seed ^ (row as u64 + 1).wrapping_mul(GOLDEN);
        let pos_mul = splitmix64(&mut state) | 1;
        let pos_add = splitmix64(&mut state);
        let sign_mul = splitmix64(&mut state) | 1;
        let sign_add = splitmix64(&mut state);
        Self {
            pos_mul,
            pos_add,
            sign_mul,
            sign_add,
        }
    }

    #[inline]
    pub fn bucket(&self, position: usize, buckets: usize) -> usize {
        debug_assert!(position <= u32::MAX as usize && buckets <= u32::MAX as usize);
        let hi = self
            .pos_mul
            .wrapping_mul(position as u64)
            .wrapping_add(self.pos_add)
            >> 32;
        ((hi * buckets as u64) >> 32) as usize
    }

    #[inline]
    pub fn sign(&self, position: usize) -> f32 {
        let h = self
            .sign_mul
            .wrapping_mul(position as u64)
            .wrapping_add(self.sign_add);
        if h >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Hashes for rows `0..rows`.
pub fn row_hashes(seed: u64, rows: usize) -> Vec<RowHash> {
    (0..rows).map(|r| RowHash::new(seed, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets_stay_in_range() {
        let h = RowHash::new(42, 0);
        for p in (0..1_000_000).step_by(997) {
            assert!(h.bucket(p, 37) < 37);
        }
    }

    #[test]
    fn rows_and_seeds_differ() {
        assert_ne!(RowHash::new(1, 0), RowHash::new(1, 1));
        assert_ne!(RowHash::new(1, 0), RowHash::new(2, 0));
        assert_eq!(RowHash::new(9, 2), RowHash::new(9, 2));
    }

    #[test]
    fn spread_is_roughly_uniform() {
        let h = RowHash::new(7, 1);
        let m = 50;
        let mut counts = vec![0usize; m];
        let mut plus = 0usize;
        let n = 100_000;
        for p in 0..n {
            counts[h.bucket(p, m)] += 1;
            if h.sign(p) > 0.0 {
                plus += 1;
            }
        }
        let expected = n / m;
        for c in counts {
            assert!(c.abs_diff(expected) < expected / 5, "bucket load {c}");
        }
        assert!(plus.abs_diff(n / 2) < n / 50);
    }
}
