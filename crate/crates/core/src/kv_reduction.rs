//! Key-only dictionary over `[U V]` built on a key-value dictionary over
//! `[U]`: each key `x` is stored as the pair `(x / V, x mod V)`. A key whose
//! high part is already resident goes to a small sorted side table instead.

use crate::dictionary::{DictError, DictStats, Dictionary, Lookup};
use crate::lazysort::LazySortDict;
use crate::slot_model::{ceil_log2, SlotArray};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitKey {
    pub k: u64,
    pub v: u64,
}

pub fn split(x: u64, universe: u64, values: u64) -> Result<SplitKey, DictError> {
    let total = universe.checked_mul(values).ok_or_else(|| DictError::BadParameters("U*V overflows".into()))?;
    if x >= total {
        return Err(DictError::KeyOutOfUniverse { key: x, universe: total });
    }
    Ok(SplitKey { k: x / values, v: x % values })
}

pub fn merge(k: u64, v: u64, universe: u64, values: u64) -> Result<u64, DictError> {
    if k >= universe || v >= values {
        return Err(DictError::BadParameters(format!("({k}, {v}) outside [{universe}] x [{values}]")));
    }
    Ok(k * values + v)
}

/// Side-table capacity: `ceil(8 max(1, n^2/U)) + 16`.
pub fn collision_capacity(n: usize, universe: u64) -> usize {
    let expected = (n as f64 * n as f64 / universe as f64).max(1.0);
    (8.0 * expected).ceil() as usize + 16
}

#[derive(Debug, Clone)]
pub struct KvReductionDict {
    universe: u64,
    values: u64,
    backing: LazySortDict,
    collisions: Vec<u64>,
    capacity: usize,
    routed: u64,
}

impl KvReductionDict {
    /// `universe` is the key-part range `U`; `budget_bits` goes to the
    /// backing dictionary.
    pub fn new(n: usize, universe: u64, values: u64, budget_bits: u64) -> Result<Self, DictError> {
        if values == 0 || universe.checked_mul(values).is_none() {
            return Err(DictError::BadParameters(format!("bad value range V = {values}")));
        }
        Ok(Self {
            universe,
            values,
            backing: LazySortDict::new(n, universe, budget_bits)?,
            collisions: Vec::new(),
            capacity: collision_capacity(n, universe),
            routed: 0,
        })
    }

    pub fn backing(&self) -> &LazySortDict {
        &self.backing
    }

    pub fn collision_entries(&self) -> &[u64] {
        &self.collisions
    }

    /// Inserts routed to the side table so far.
    pub fn collisions_routed(&self) -> u64 {
        self.routed
    }

    fn entry_bits(&self) -> u64 {
        ceil_log2(self.universe * self.values) as u64
    }

    fn add_collision(&mut self, x: u64) -> Result<(), DictError> {
        match self.collisions.binary_search(&x) {
            Ok(_) => Err(DictError::KeyPresent(x)),
            Err(_) if self.collisions.len() >= self.capacity => Err(DictError::CollisionOverflow(self.capacity)),
            Err(pos) => {
                self.collisions.insert(pos, x);
                self.routed += 1;
                Ok(())
            }
        }
    }
}

impl Dictionary for KvReductionDict {
    fn name(&self) -> &'static str {
        "kv-reduction"
    }

    fn capacity(&self) -> usize {
        self.backing.capacity()
    }

    fn len(&self) -> usize {
        self.backing.len() + self.collisions.len()
    }

    fn bulk_init(&mut self, keys: &[u64]) -> Result<(), DictError> {
        if !self.is_empty() {
            return Err(DictError::NotEmpty);
        }
        if keys.len() > self.capacity() {
            return Err(DictError::TooManyKeys { capacity: self.capacity(), got: keys.len() });
        }
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(DictError::KeyPresent(w[0]));
        }
        let mut pairs: Vec<(u64, u64)> = Vec::with_capacity(sorted.len());
        let mut extra = Vec::new();
        for &x in &sorted {
            let s = split(x, self.universe, self.values)?;
            match pairs.last() {
                Some(&(k, _)) if k == s.k => extra.push(x),
                _ => pairs.push((s.k, s.v)),
            }
        }
        if extra.len() > self.capacity {
            return Err(DictError::CollisionOverflow(self.capacity));
        }
        self.backing.bulk_init_with_values(&pairs)?;
        self.routed += extra.len() as u64;
        self.collisions = extra;
        Ok(())
    }

    fn insert(&mut self, x: u64) -> Result<(), DictError> {
        let s = split(x, self.universe, self.values)?;
        match self.backing.get(s.k) {
            Some(v) if v == s.v => Err(DictError::KeyPresent(x)),
            Some(_) => {
                if self.len() >= self.capacity() {
                    return Err(DictError::Full(self.capacity()));
                }
                self.add_collision(x)
            }
            None => {
                if self.len() >= self.capacity() {
                    return Err(DictError::Full(self.capacity()));
                }
                self.backing.insert_with_value(s.k, s.v)
            }
        }
    }

    fn delete(&mut self, x: u64) -> Result<(), DictError> {
        let s = split(x, self.universe, self.values)?;
        if self.backing.get(s.k) == Some(s.v) {
            self.backing.delete(s.k)?;
            // a side-table key with the same high part takes over the pair
            let lo = self.collisions.partition_point(|&y| y < s.k * self.values);
            if let Some(&y) = self.collisions.get(lo).filter(|&&y| y / self.values == s.k) {
                self.collisions.remove(lo);
                self.backing.insert_with_value(s.k, y % self.values)?;
            }
            return Ok(());
        }
        match self.collisions.binary_search(&x) {
            Ok(pos) => {
                self.collisions.remove(pos);
                Ok(())
            }
            Err(_) => Err(DictError::KeyAbsent(x)),
        }
    }

    fn query(&self, x: u64) -> Lookup {
        let Ok(s) = split(x, self.universe, self.values) else { return Lookup::MISS };
        if self.backing.get(s.k) == Some(s.v) {
            return self.backing.query(s.k);
        }
        if self.collisions.binary_search(&x).is_ok() {
            return Lookup { found: true, slot: None };
        }
        Lookup::MISS
    }

    fn stats(&self) -> DictStats {
        let mut stats = self.backing.stats();
        stats.aux_bits += self.collisions.len() as u64 * self.entry_bits();
        stats.stored = self.len();
        stats
    }

    /// Backing budget plus a full side table.
    fn budget_bits(&self) -> Option<u64> {
        self.backing.budget_bits().map(|b| b + self.capacity as u64 * self.entry_bits())
    }

    fn set_clock(&mut self, time: u64) {
        self.backing.set_clock(time);
    }

    fn slots(&self) -> &SlotArray {
        self.backing.slots()
    }

    fn slots_mut(&mut self) -> &mut SlotArray {
        self.backing.slots_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        assert_eq!(split(0, 4, 8).unwrap(), SplitKey { k: 0, v: 0 });
        assert_eq!(split(19, 4, 8).unwrap(), SplitKey { k: 2, v: 3 });
        assert_eq!(merge(2, 3, 4, 8).unwrap(), 19);
        assert!(split(32, 4, 8).is_err());
        assert!(merge(4, 0, 4, 8).is_err());
        for x in 0..64 {
            let s = split(x, 8, 8).unwrap();
            assert_eq!(merge(s.k, s.v, 8, 8).unwrap(), x);
        }
    }

    #[test]
    fn wrong_value_is_a_miss() {
        let mut d = KvReductionDict::new(4, 64, 8, 1 << 12).unwrap();
        d.insert(19).unwrap();
        assert!(d.query(19).found);
        assert!(!d.query(merge(2, 5, 64, 8).unwrap()).found);
    }

    #[test]
    fn shared_high_part_goes_to_side_table() {
        let mut d = KvReductionDict::new(4, 64, 8, 1 << 12).unwrap();
        d.insert(19).unwrap();
        d.insert(21).unwrap();
        assert_eq!(d.collision_entries(), &[21]);
        assert_eq!(d.collisions_routed(), 1);
        assert!(d.query(19).found && d.query(21).found);
        assert_eq!(d.insert(21), Err(DictError::KeyPresent(21)));
        d.delete(19).unwrap();
        assert!(d.collision_entries().is_empty());
        assert!(d.query(21).found && d.query(21).slot.is_some());
        assert!(!d.query(19).found);
        assert_eq!(d.delete(19), Err(DictError::KeyAbsent(19)));
    }

    #[test]
    fn side_table_capacity() {
        assert_eq!(collision_capacity(4096, 1 << 24), 24);
        assert_eq!(collision_capacity(16, 64), 48);
        let mut d = KvReductionDict::new(64, 1 << 20, 64, 1 << 14).unwrap();
        d.insert(0).unwrap();
        let cap = collision_capacity(64, 1 << 20);
        assert_eq!(cap, 24);
        for v in 1..=cap as u64 {
            d.insert(v).unwrap();
        }
        assert_eq!(d.insert(cap as u64 + 1), Err(DictError::CollisionOverflow(cap)));
    }

    #[test]
    fn bulk_init_routes_duplicates() {
        let mut d = KvReductionDict::new(8, 64, 8, 1 << 12).unwrap();
        d.bulk_init(&[16, 17, 40, 18]).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.collision_entries(), &[17, 18]);
        for x in [16, 17, 18, 40] {
            assert!(d.query(x).found, "{x}");
        }
    }
}
