use serde::{Deserialize, Serialize};

use super::CodecError;

/// Bits per position in a packed [`Index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum IndexWidth {
    /// One bit per position. Merging by addition carries into neighbours.
    One,
    /// One nibble per position. Exact for up to 15 summed indices.
    Four,
}

impl IndexWidth {
    pub fn bits(self) -> u32 {
        match self {
            IndexWidth::One => 1,
            IndexWidth::Four => 4,
        }
    }

    fn mask(self) -> u32 {
        (1u32 << self.bits()) - 1
    }

    fn per_word(self) -> usize {
        (32 / self.bits()) as usize
    }
}

impl TryFrom<u32> for IndexWidth {
    type Error = CodecError;

    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        match bits {
            1 => Ok(IndexWidth::One),
            4 => Ok(IndexWidth::Four),
            other => Err(CodecError::UnsupportedWidth(other)),
        }
    }
}

impl From<IndexWidth> for u32 {
    fn from(w: IndexWidth) -> u32 {
        w.bits()
    }
}

impl std::fmt::Display for IndexWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-bit", self.bits())
    }
}

/// Packed presence map over `n` gradient positions.
///
/// A freshly created index stores 1 for every nonzero position. Indices from
/// several ranks are merged by word-wise wrapping integer addition, which the
/// merged value's [`Index::presence`] then interprets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Index {
    n: usize,
    width: IndexWidth,
    words: Vec<u32>,
}

impl Index {
    pub fn word_count(n: usize, width: IndexWidth) -> usize {
        (n * width.bits() as usize).div_ceil(32)
    }

    /// Marks every position whose value is nonzero. Negative zero counts as zero.
    pub fn create(values: &[f32], width: IndexWidth) -> Self {
        let n = values.len();
        let per_word = width.per_word();
        let bits = width.bits() as usize;
        let mut words = vec![0u32; Self::word_count(n, width)];
        for (p, &v) in values.iter().enumerate() {
            if v != 0.0 {
                words[p / per_word] |= 1 << ((p % per_word) * bits);
            }
        }
        Self { n, width, words }
    }

    /// Wraps summed words received from an all-reduce.
    pub fn from_words(n: usize, width: IndexWidth, words: Vec<u32>) -> Result<Self, CodecError> {
        let expected = Self::word_count(n, width);
        if words.len() != expected {
            return Err(CodecError::LengthMismatch {
                expected,
                actual: words.len(),
            });
        }
        Ok(Self { n, width, words })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> IndexWidth {
        self.width
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn into_words(self) -> Vec<u32> {
        self.words
    }

    /// Field value stored for position `p`.
    pub fn field(&self, p: usize) -> u32 {
        assert!(
            p < self.n,
            "position {p} out of range for index of {}",
            self.n
        );
        let per_word = self.width.per_word();
        let shift = (p % per_word) as u32 * self.width.bits();
        (self.words[p / per_word] >> shift) & self.width.mask()
    }

    /// Interprets the (possibly summed) index as a set of present positions.
    ///
    /// A 4-bit field is present when it is nonzero. A 1-bit field is present
    /// when its bit is set, so carries produced by summation both drop true
    /// positions and introduce spurious ones.
    pub fn presence(&self) -> Presence {
        let per_word = self.width.per_word();
        let bits = self.width.bits();
        let mask = self.width.mask();
        let mut positions = Vec::new();
        for (w, &word) in self.words.iter().enumerate() {
            if word == 0 {
                continue;
            }
            let base = w * per_word;
            for slot in 0..per_word {
                let p = base + slot;
                if p >= self.n {
                    break;
                }
                if (word >> (slot as u32 * bits)) & mask != 0 {
                    positions.push(p);
                }
            }
        }
        Presence {
            n: self.n,
            positions,
        }
    }

    pub fn payload_bits(&self) -> u64 {
        self.words.len() as u64 * 32
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(n: usize, width: IndexWidth, bytes: &[u8]) -> Result<Self, CodecError> {
        let expected = Self::word_count(n, width) * 4;
        if bytes.len() != expected {
            return Err(CodecError::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let words = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { n, width, words })
    }
}

/// Sorted set of present positions out of `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Presence {
    n: usize,
    positions: Vec<usize>,
}

impl Presence {
    /// Builds a presence set from arbitrary positions; duplicates are removed.
    pub fn from_positions(n: usize, mut positions: Vec<usize>) -> Self {
        positions.sort_unstable();
        positions.dedup();
        assert!(
            positions.last().is_none_or(|&p| p < n),
            "position out of range"
        );
        Self { n, positions }
    }

    /// Positions holding a nonzero value.
    pub fn of_nonzeros(values: &[f32]) -> Self {
        let positions = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(p, _)| p)
            .collect();
        Self {
            n: values.len(),
            positions,
        }
    }

    pub fn universe(&self) -> usize {
        self.n
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, p: usize) -> bool {
        self.positions.binary_search(&p).is_ok()
    }

    /// Counts positions of `truth` missing here and positions here absent from `truth`.
    pub fn diff_counts(&self, truth: &Presence) -> (usize, usize) {
        let (mut i, mut j) = (0, 0);
        let (mut lost, mut spurious) = (0, 0);
        let (a, b) = (&self.positions, &truth.positions);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => {
                    spurious += 1;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    lost += 1;
                    j += 1;
                }
            }
        }
        spurious += a.len() - i;
        lost += b.len() - j;
        (lost, spurious)
    }
}
