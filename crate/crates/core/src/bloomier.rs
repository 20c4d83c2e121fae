//! Compact separating sets: given disjoint `A` and `B`, encode some `S`
//! with `A ⊆ S` and `S ∩ B = ∅`.
//!
//! Each key of `A ∪ B` hashes to one position in each of three equal
//! segments of a bit table, and the XOR of those three bits is its
//! membership answer (1 for `A`, 0 for `B`). The table is solved by peeling
//! the 3-hypergraph. After 16 failed seeds the encoding falls back to
//! storing `A` explicitly.
//!
//! Byte layout (little-endian, LSB-first bit packing):
//!
//! | field | size |
//! |---|---|
//! | flags (bit 0: explicit fallback) | 1 byte |
//! | hash seed | 4 bytes |
//! | table size `m` (fallback: `|A|`), LEB128 | 1+ bytes |
//! | fallback only: key width `w` | 1 byte |
//! | table bits, or `|A|` sorted keys of `w` bits | `m` or `|A| w` bits |

use std::collections::HashSet;

use thiserror::Error;

use crate::bits::{BitReader, BitWriter};
use crate::slot_model::ceil_log2;

pub const MAX_ATTEMPTS: u32 = 16;
/// Table bits per key before rounding.
pub const LOAD: f64 = 1.23;
/// Extra table bits; tiny tables peel poorly at the asymptotic load.
pub const SLACK: usize = 32;

const FLAG_FALLBACK: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BloomierError {
    #[error("key {0} is in both sets")]
    NotDisjoint(u64),
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Body {
    Table(Vec<bool>),
    Explicit { key_bits: u32, keys: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomierEncoding {
    seed: u32,
    body: Body,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn positions(key: u64, seed: u32, m: usize) -> [usize; 3] {
    let seg = (m / 3) as u64;
    let h = mix(key ^ mix(seed as u64));
    std::array::from_fn(|i| {
        let hi = mix(h.wrapping_add(i as u64));
        (i as u64 * seg + ((hi as u128 * seg as u128) >> 64) as u64) as usize
    })
}

pub fn table_size(keys: usize) -> usize {
    if keys == 0 {
        return 0;
    }
    let raw = (LOAD * keys as f64).ceil() as usize + SLACK;
    raw.div_ceil(3) * 3
}

// Returns the peel order as (key index, free position), or None if a
// 2-core remains.
fn peel(edges: &[[usize; 3]], m: usize) -> Option<Vec<(usize, usize)>> {
    let mut degree = vec![0u32; m];
    let mut xor_edges = vec![0usize; m];
    for (e, pos) in edges.iter().enumerate() {
        for &p in pos {
            degree[p] += 1;
            xor_edges[p] ^= e;
        }
    }
    let mut stack: Vec<usize> = (0..m).filter(|&p| degree[p] == 1).collect();
    let mut order = Vec::with_capacity(edges.len());
    while let Some(p) = stack.pop() {
        if degree[p] != 1 {
            continue;
        }
        let e = xor_edges[p];
        order.push((e, p));
        for &q in &edges[e] {
            degree[q] -= 1;
            xor_edges[q] ^= e;
            if degree[q] == 1 {
                stack.push(q);
            }
        }
    }
    (order.len() == edges.len()).then_some(order)
}

impl BloomierEncoding {
    /// `universe` sizes the explicit fallback's keys.
    pub fn build(a: &[u64], b: &[u64], universe: u64, seed: u64) -> Result<Self, BloomierError> {
        let a_set: HashSet<u64> = a.iter().copied().collect();
        if let Some(&x) = b.iter().find(|x| a_set.contains(x)) {
            return Err(BloomierError::NotDisjoint(x));
        }
        let mut keys: Vec<(u64, bool)> = a.iter().map(|&k| (k, true)).chain(b.iter().map(|&k| (k, false))).collect();
        keys.sort_unstable();
        keys.dedup();
        let m = table_size(keys.len());
        for attempt in 0..MAX_ATTEMPTS {
            let s = (seed as u32).wrapping_add(attempt.wrapping_mul(0x9E37_79B9));
            let edges: Vec<[usize; 3]> = keys.iter().map(|&(k, _)| positions(k, s, m)).collect();
            if let Some(order) = peel(&edges, m) {
                let mut table = vec![false; m];
                for &(e, free) in order.iter().rev() {
                    let others = edges[e].iter().filter(|&&p| p != free).fold(false, |acc, &p| acc ^ table[p]);
                    table[free] = keys[e].1 ^ others;
                }
                return Ok(Self { seed: s, body: Body::Table(table) });
            }
        }
        let mut explicit: Vec<u64> = a_set.into_iter().collect();
        explicit.sort_unstable();
        Ok(Self { seed: seed as u32, body: Body::Explicit { key_bits: ceil_log2(universe).max(1), keys: explicit } })
    }

    pub fn query(&self, x: u64) -> bool {
        match &self.body {
            Body::Table(table) if table.is_empty() => false,
            Body::Table(table) => positions(x, self.seed, table.len()).iter().fold(false, |acc, &p| acc ^ table[p]),
            Body::Explicit { keys, .. } => keys.binary_search(&x).is_ok(),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self.body, Body::Explicit { .. })
    }

    pub fn seed(&self) -> u32 {
        self.seed
    }

    /// Serialized size, header included.
    pub fn size_bits(&self) -> u64 {
        self.header_bytes() as u64 * 8 + self.payload_bits()
    }

    fn length_field(&self) -> u64 {
        match &self.body {
            Body::Table(t) => t.len() as u64,
            Body::Explicit { keys, .. } => keys.len() as u64,
        }
    }

    fn header_bytes(&self) -> usize {
        let mut len = Vec::new();
        leb128::write::unsigned(&mut len, self.length_field()).expect("writing to a Vec");
        1 + 4 + len.len() + usize::from(self.is_fallback())
    }

    fn payload_bits(&self) -> u64 {
        match &self.body {
            Body::Table(t) => t.len() as u64,
            Body::Explicit { key_bits, keys } => keys.len() as u64 * *key_bits as u64,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![if self.is_fallback() { FLAG_FALLBACK } else { 0 }];
        out.extend_from_slice(&self.seed.to_le_bytes());
        leb128::write::unsigned(&mut out, self.length_field()).expect("writing to a Vec");
        let mut w = BitWriter::new();
        match &self.body {
            Body::Table(t) => t.iter().for_each(|&bit| w.push_bit(bit)),
            Body::Explicit { key_bits, keys } => {
                out.push(*key_bits as u8);
                keys.iter().for_each(|&k| w.write(k, *key_bits));
            }
        }
        out.extend(w.into_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BloomierError> {
        let (&flags, rest) = bytes.split_first().ok_or(BloomierError::Malformed("empty input"))?;
        if flags & !FLAG_FALLBACK != 0 {
            return Err(BloomierError::Malformed("unknown flags"));
        }
        let seed_bytes: [u8; 4] = rest.get(..4).ok_or(BloomierError::Malformed("truncated seed"))?.try_into().unwrap();
        let seed = u32::from_le_bytes(seed_bytes);
        let mut cursor = &rest[4..];
        let len = leb128::read::unsigned(&mut cursor).map_err(|_| BloomierError::Malformed("bad length"))?;
        let len = usize::try_from(len).map_err(|_| BloomierError::Malformed("length overflow"))?;
        let truncated = BloomierError::Malformed("truncated payload");
        if flags & FLAG_FALLBACK == 0 {
            if len % 3 != 0 || cursor.len() < len.div_ceil(8) {
                return Err(truncated);
            }
            let mut r = BitReader::new(cursor);
            let table = (0..len).map(|_| r.read_bit().unwrap()).collect();
            Ok(Self { seed, body: Body::Table(table) })
        } else {
            let (&key_bits, payload) = cursor.split_first().ok_or(truncated.clone())?;
            let key_bits = key_bits as u32;
            if !(1..=64).contains(&key_bits) || (payload.len() as u64) * 8 < len as u64 * key_bits as u64 {
                return Err(truncated);
            }
            let mut r = BitReader::new(payload);
            let keys = (0..len).map(|_| r.read(key_bits).unwrap()).collect();
            Ok(Self { seed, body: Body::Explicit { key_bits, keys } })
        }
    }
}
