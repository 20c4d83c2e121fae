//! Reference dictionaries for the benchmark: linear probing at load 1/2,
//! and a fully sorted array with no auxiliary state.

use crate::dictionary::{DictError, DictStats, Dictionary, Lookup};
use crate::slot_model::{default_word_bits, SlotArray};

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Open addressing over `2n` slots with backward-shift deletion.
#[derive(Debug, Clone)]
pub struct LinearProbeDict {
    n: usize,
    universe: u64,
    seed: u64,
    slots: SlotArray,
    clock: u64,
}

impl LinearProbeDict {
    pub fn new(n: usize, universe: u64, seed: u64) -> Result<Self, DictError> {
        if n == 0 {
            return Err(DictError::BadParameters("capacity must be at least 1".into()));
        }
        Ok(Self { n, universe, seed, slots: SlotArray::new(2 * n), clock: 0 })
    }

    pub fn home(&self, key: u64) -> usize {
        (mix(key ^ self.seed) % self.slots.capacity() as u64) as usize
    }

    /// Slot holding `key`, or the empty slot that ends its probe run.
    fn probe(&self, key: u64) -> Result<usize, usize> {
        let m = self.slots.capacity();
        let mut i = self.home(key);
        loop {
            match self.slots.get(i) {
                None => return Err(i),
                Some(k) if k == key => return Ok(i),
                Some(_) => i = (i + 1) % m,
            }
        }
    }

    pub fn space_bits(&self) -> u64 {
        self.slots.capacity() as u64 * default_word_bits(self.universe) as u64
    }
}

impl Dictionary for LinearProbeDict {
    fn name(&self) -> &'static str {
        "linear-probe"
    }

    fn capacity(&self) -> usize {
        self.n
    }

    fn len(&self) -> usize {
        self.slots.len()
    }

    fn bulk_init(&mut self, keys: &[u64]) -> Result<(), DictError> {
        if !self.slots.is_empty() {
            return Err(DictError::NotEmpty);
        }
        if keys.len() > self.n {
            return Err(DictError::TooManyKeys { capacity: self.n, got: keys.len() });
        }
        keys.iter().try_for_each(|&k| self.insert(k))
    }

    fn insert(&mut self, key: u64) -> Result<(), DictError> {
        if key >= self.universe {
            return Err(DictError::KeyOutOfUniverse { key, universe: self.universe });
        }
        match self.probe(key) {
            Ok(_) => Err(DictError::KeyPresent(key)),
            Err(_) if self.slots.len() >= self.n => Err(DictError::Full(self.n)),
            Err(slot) => Ok(self.slots.place(key, slot, self.clock)?),
        }
    }

    fn delete(&mut self, key: u64) -> Result<(), DictError> {
        let mut hole = self.probe(key).map_err(|_| DictError::KeyAbsent(key))?;
        self.slots.evict(hole, self.clock)?;
        let m = self.slots.capacity();
        let mut j = (hole + 1) % m;
        while let Some(k) = self.slots.get(j) {
            let home = self.home(k);
            // k may fill the hole only if the hole lies on its probe path
            if (j + m - home) % m >= (j + m - hole) % m {
                self.slots.move_key(j, hole, self.clock)?;
                hole = j;
            }
            j = (j + 1) % m;
        }
        Ok(())
    }

    fn query(&self, key: u64) -> Lookup {
        match self.probe(key) {
            Ok(slot) => Lookup::hit(slot),
            Err(_) => Lookup::MISS,
        }
    }

    fn stats(&self) -> DictStats {
        DictStats {
            move_count: self.slots.move_count(),
            aux_bits: 0,
            level_counts: Vec::new(),
            rebuild_count: 0,
            stored: self.slots.len(),
            space_bits: Some(self.space_bits()),
        }
    }

    fn set_clock(&mut self, time: u64) {
        self.clock = time;
    }

    fn slots(&self) -> &SlotArray {
        &self.slots
    }

    fn slots_mut(&mut self) -> &mut SlotArray {
        &mut self.slots
    }
}

/// Keeps the occupied prefix of `n` slots in sorted order at all times.
#[derive(Debug, Clone)]
pub struct EagerSortedDict {
    n: usize,
    universe: u64,
    slots: SlotArray,
    clock: u64,
}

impl EagerSortedDict {
    pub fn new(n: usize, universe: u64) -> Result<Self, DictError> {
        if n == 0 {
            return Err(DictError::BadParameters("capacity must be at least 1".into()));
        }
        Ok(Self { n, universe, slots: SlotArray::new(n), clock: 0 })
    }

    fn search(&self, key: u64) -> Result<usize, usize> {
        let count = self.slots.len();
        let prefix = &self.slots.contents()[..count];
        prefix.binary_search_by(|s| s.expect("prefix is occupied").cmp(&key))
    }

    fn shift(&mut self, range: std::ops::Range<usize>, right: bool) -> Result<(), DictError> {
        let plan: Vec<(usize, usize)> = range.map(|i| (i, if right { i + 1 } else { i - 1 })).collect();
        self.slots.rearrange(&plan, self.clock)?;
        Ok(())
    }
}

impl Dictionary for EagerSortedDict {
    fn name(&self) -> &'static str {
        "eager"
    }

    fn capacity(&self) -> usize {
        self.n
    }

    fn len(&self) -> usize {
        self.slots.len()
    }

    fn bulk_init(&mut self, keys: &[u64]) -> Result<(), DictError> {
        if !self.slots.is_empty() {
            return Err(DictError::NotEmpty);
        }
        if keys.len() > self.n {
            return Err(DictError::TooManyKeys { capacity: self.n, got: keys.len() });
        }
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(DictError::KeyPresent(w[0]));
        }
        if let Some(&k) = sorted.iter().find(|&&k| k >= self.universe) {
            return Err(DictError::KeyOutOfUniverse { key: k, universe: self.universe });
        }
        for (slot, &k) in sorted.iter().enumerate() {
            self.slots.place(k, slot, self.clock)?;
        }
        Ok(())
    }

    fn insert(&mut self, key: u64) -> Result<(), DictError> {
        if key >= self.universe {
            return Err(DictError::KeyOutOfUniverse { key, universe: self.universe });
        }
        let count = self.slots.len();
        let pos = match self.search(key) {
            Ok(_) => return Err(DictError::KeyPresent(key)),
            Err(_) if count >= self.n => return Err(DictError::Full(self.n)),
            Err(pos) => pos,
        };
        self.shift(pos..count, true)?;
        self.slots.place(key, pos, self.clock)?;
        Ok(())
    }

    fn delete(&mut self, key: u64) -> Result<(), DictError> {
        let pos = self.search(key).map_err(|_| DictError::KeyAbsent(key))?;
        let count = self.slots.len();
        self.slots.evict(pos, self.clock)?;
        self.shift(pos + 1..count, false)
    }

    fn query(&self, key: u64) -> Lookup {
        match self.search(key) {
            Ok(slot) => Lookup::hit(slot),
            Err(_) => Lookup::MISS,
        }
    }

    fn stats(&self) -> DictStats {
        DictStats {
            move_count: self.slots.move_count(),
            aux_bits: 0,
            level_counts: Vec::new(),
            rebuild_count: 0,
            stored: self.slots.len(),
            space_bits: None,
        }
    }

    fn budget_bits(&self) -> Option<u64> {
        Some(0)
    }

    fn set_clock(&mut self, time: u64) {
        self.clock = time;
    }

    fn slots(&self) -> &SlotArray {
        &self.slots
    }

    fn slots_mut(&mut self) -> &mut SlotArray {
        &mut self.slots
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_probe_basics() {
        let mut d = LinearProbeDict::new(4, 100, 7).unwrap();
        d.insert(42).unwrap();
        assert!(d.query(42).found);
        assert!(!d.query(41).found);
        assert_eq!(d.insert(42), Err(DictError::KeyPresent(42)));
        for k in [1, 2, 3] {
            d.insert(k).unwrap();
        }
        assert_eq!(d.insert(4), Err(DictError::Full(4)));
        assert_eq!(d.stats().space_bits, Some(8 * 7));
        d.delete(42).unwrap();
        assert_eq!(d.delete(42), Err(DictError::KeyAbsent(42)));
    }

    #[test]
    fn backward_shift_keeps_colliding_keys_reachable() {
        let mut d = LinearProbeDict::new(64, 1 << 20, 3).unwrap();
        let target = d.home(0);
        let cluster: Vec<u64> = (0..1 << 20).filter(|&k| d.home(k) == target).take(4).collect();
        for &k in &cluster {
            d.insert(k).unwrap();
        }
        d.delete(cluster[0]).unwrap();
        for &k in &cluster[1..] {
            assert!(d.query(k).found, "lost {k}");
        }
        assert_eq!(d.query(cluster[1]).slot, Some(target));
    }

    #[test]
    fn eager_smallest_insert_shifts_everything() {
        let n = 10;
        let mut d = EagerSortedDict::new(n, 1000).unwrap();
        d.bulk_init(&(1..n as u64).map(|k| k * 10).collect::<Vec<_>>()).unwrap();
        let before = d.stats().move_count;
        d.insert(0).unwrap();
        // n - 1 forced shifts plus placing the new key
        assert_eq!(d.stats().move_count - before, n as u64);
        let keys: Vec<u64> = d.slots().contents().iter().map(|s| s.unwrap()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d.stats().aux_bits, 0);
    }

    #[test]
    fn eager_query_costs_nothing() {
        let mut d = EagerSortedDict::new(8, 100).unwrap();
        d.bulk_init(&[5, 1, 9]).unwrap();
        let before = d.stats().move_count;
        assert_eq!(d.query(5), Lookup::hit(1));
        assert_eq!(d.query(6), Lookup::MISS);
        assert_eq!(d.stats().move_count, before);
        d.delete(1).unwrap();
        assert_eq!(d.query(5), Lookup::hit(0));
        assert_eq!(d.query(9), Lookup::hit(1));
    }
}
