//! In-process simulation of a rank group.
//!
//! Collectives take one payload per rank, by value, and hand back one result
//! per rank. Reductions always fold in ascending rank order, starting from
//! rank 0's buffer, so float results do not depend on the execution mode.
//! Every call is recorded in the world's [`TrafficLedger`] as
//! `cost_factor(op) * payload_bits` per rank.

mod ledger;

use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{LedgerRow, TrafficLedger, TrafficTotals};

/// Largest world whose 4-bit index fields cannot overflow when summed.
pub const MAX_NIBBLE_WORLD: usize = 15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommError {
    #[error("world size must be at least 1")]
    EmptyWorld,
    #[error("expected one payload per rank ({expected}), got {actual}")]
    RankCount { expected: usize, actual: usize },
    #[error("rank {rank} sent {actual} elements, rank 0 sent {expected}")]
    LengthMismatch {
        rank: usize,
        expected: usize,
        actual: usize,
    },
    #[error("root {root} is not a rank of a world of size {size}")]
    InvalidRoot { root: usize, size: usize },
    #[error("payload of {len} elements does not split across {size} ranks")]
    NotDivisible { len: usize, size: usize },
    #[error("4-bit index fields overflow when more than 15 ranks are summed (world size {0})")]
    NibbleOverflow(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// All rank work runs on the calling thread.
    #[default]
    Sequential,
    /// One worker thread per rank between collective boundaries.
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    AllReduce,
    Reduce,
    ReduceScatter,
    AllGather,
}

impl CollectiveKind {
    /// All-Reduce moves twice the payload of the one-shot collectives.
    pub fn cost_factor(self) -> u64 {
        match self {
            CollectiveKind::AllReduce => 2,
            CollectiveKind::Reduce | CollectiveKind::ReduceScatter | CollectiveKind::AllGather => 1,
        }
    }
}

/// Element types a collective can sum.
pub trait Element: Copy + Send + Sync + 'static {
    const BITS: u64;
    fn combine(self, other: Self) -> Self;
}

/// Packed index words: wrapping addition with natural carries.
impl Element for u32 {
    const BITS: u64 = 32;
    #[inline]
    fn combine(self, other: Self) -> Self {
        self.wrapping_add(other)
    }
}

impl Element for f32 {
    const BITS: u64 = 32;
    #[inline]
    fn combine(self, other: Self) -> Self {
        self + other
    }
}

/// Ledger label and per-parameter normaliser for one collective call.
#[derive(Clone, Copy, Debug)]
pub struct Traffic<'a> {
    pub tag: &'a str,
    pub params: usize,
}

impl<'a> Traffic<'a> {
    pub fn new(tag: &'a str, params: usize) -> Self {
        Self { tag, params }
    }
}

#[derive(Debug)]
pub struct World {
    size: usize,
    mode: ExecMode,
    ledger: Mutex<TrafficLedger>,
}

impl World {
    pub fn new(size: usize, mode: ExecMode) -> Result<Self, CommError> {
        if size == 0 {
            return Err(CommError::EmptyWorld);
        }
        Ok(Self {
            size,
            mode,
            ledger: Mutex::new(TrafficLedger::default()),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    /// Fails when summed 4-bit index fields could overflow into neighbours.
    pub fn check_nibble_capacity(&self) -> Result<(), CommError> {
        if self.size > MAX_NIBBLE_WORLD {
            return Err(CommError::NibbleOverflow(self.size));
        }
        Ok(())
    }

    fn lock_ledger(&self) -> MutexGuard<'_, TrafficLedger> {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn ledger(&self) -> TrafficLedger {
        self.lock_ledger().clone()
    }

    pub fn take_ledger(&self) -> TrafficLedger {
        std::mem::take(&mut *self.lock_ledger())
    }

    /// Runs `f(rank)` for every rank; results come back in rank order.
    pub fn map_ranks<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        match self.mode {
            ExecMode::Sequential => (0..self.size).map(f).collect(),
            ExecMode::Parallel => std::thread::scope(|s| {
                let f = &f;
                let handles: Vec<_> = (0..self.size).map(|r| s.spawn(move || f(r))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
                    .collect()
            }),
        }
    }

    fn check_payloads<T>(&self, payloads: &[Vec<T>]) -> Result<usize, CommError> {
        if payloads.len() != self.size {
            return Err(CommError::RankCount {
                expected: self.size,
                actual: payloads.len(),
            });
        }
        let len = payloads[0].len();
        if let Some((rank, p)) = payloads.iter().enumerate().find(|(_, p)| p.len() != len) {
            return Err(CommError::LengthMismatch {
                rank,
                expected: len,
                actual: p.len(),
            });
        }
        Ok(len)
    }

    fn record(&self, op: CollectiveKind, traffic: Traffic<'_>, elements: usize, bits: u64) {
        self.lock_ledger().record(
            op,
            traffic.tag,
            elements as u64 * bits,
            traffic.params as u64,
        );
    }

    /// Rank-ordered sum of `payloads[..][range]`.
    fn fold_range<T: Element>(payloads: &[Vec<T>], range: std::ops::Range<usize>) -> Vec<T> {
        let mut acc = payloads[0][range.clone()].to_vec();
        for p in &payloads[1..] {
            for (a, b) in acc.iter_mut().zip(&p[range.clone()]) {
                *a = a.combine(*b);
            }
        }
        acc
    }

    /// Rank-ordered sum of the full payloads, split across rank workers in
    /// parallel mode.
    fn fold<T: Element>(&self, payloads: &[Vec<T>], len: usize) -> Vec<T> {
        match self.mode {
            ExecMode::Sequential => Self::fold_range(payloads, 0..len),
            ExecMode::Parallel => {
                let chunk = len.div_ceil(self.size);
                self.map_ranks(|r| {
                    Self::fold_range(payloads, (r * chunk).min(len)..((r + 1) * chunk).min(len))
                })
                .concat()
            }
        }
    }

    /// Sum delivered to every rank. Charged `2x` payload.
    pub fn all_reduce_sum<T: Element>(
        &self,
        payloads: Vec<Vec<T>>,
        traffic: Traffic<'_>,
    ) -> Result<Vec<Vec<T>>, CommError> {
        let len = self.check_payloads(&payloads)?;
        let sum = self.fold(&payloads, len);
        self.record(CollectiveKind::AllReduce, traffic, len, T::BITS);
        Ok(vec![sum; self.size])
    }

    /// Sum delivered to `root` only. Charged `1x` payload.
    pub fn reduce<T: Element>(
        &self,
        payloads: Vec<Vec<T>>,
        root: usize,
        traffic: Traffic<'_>,
    ) -> Result<Vec<Option<Vec<T>>>, CommError> {
        if root >= self.size {
            return Err(CommError::InvalidRoot {
                root,
                size: self.size,
            });
        }
        let len = self.check_payloads(&payloads)?;
        let sum = self.fold(&payloads, len);
        self.record(CollectiveKind::Reduce, traffic, len, T::BITS);
        let mut out: Vec<Option<Vec<T>>> = vec![None; self.size];
        out[root] = Some(sum);
        Ok(out)
    }

    /// Rank `r` receives the sum of slice `r`. Charged `1x` payload.
    pub fn reduce_scatter<T: Element>(
        &self,
        payloads: Vec<Vec<T>>,
        traffic: Traffic<'_>,
    ) -> Result<Vec<Vec<T>>, CommError> {
        let len = self.check_payloads(&payloads)?;
        if len % self.size != 0 {
            return Err(CommError::NotDivisible {
                len,
                size: self.size,
            });
        }
        let slice = len / self.size;
        let out = self.map_ranks(|r| Self::fold_range(&payloads, r * slice..(r + 1) * slice));
        self.record(CollectiveKind::ReduceScatter, traffic, len, T::BITS);
        Ok(out)
    }

    /// Every rank receives the rank-ordered concatenation. Charged `1x` the
    /// gathered length.
    pub fn all_gather<T: Element>(
        &self,
        slices: Vec<Vec<T>>,
        traffic: Traffic<'_>,
    ) -> Result<Vec<Vec<T>>, CommError> {
        let len = self.check_payloads(&slices)?;
        let gathered = slices.concat();
        self.record(CollectiveKind::AllGather, traffic, len * self.size, T::BITS);
        Ok(vec![gathered; self.size])
    }
}
