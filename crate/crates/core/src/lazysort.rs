//! A slot-model dictionary that keeps keys approximately sorted with lazy,
//! multi-level rearrangement.
//!
//! After a full rebuild every key sits in the slot equal to its rank, so the
//! key set alone locates everything. Each later insert goes into the lowest
//! empty slot and is remembered explicitly as a *pending* entry
//! (`ceil(log U) + ceil(log n)` bits). When the pending level outgrows its
//! cap, its keys are sorted among their own slots and become a level-1
//! *batch*, which only has to remember its slot set (a subset rank of
//! `ceil(log2 C(n, size))` bits). Level-`j` batches are merged into a level
//! `j+1` batch the same way, and an overflowing top level (or `n` inserts
//! since the last rebuild) triggers a full re-sort.
//!
//! Every bit of auxiliary state is itemised in the ledger returned by
//! [`LazySortDict::ledger`], and the cascade keeps the total within the
//! configured budget after every public operation.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::bits::{BitReader, BitWriter};
use crate::dictionary::{DictError, DictStats, Dictionary, Lookup};
use crate::mathkit::{self, SubsetRank};
use crate::slot_model::{ceil_log2, SlotArray};

/// Width of one per-level bookkeeping word (the level's entry count).
pub const LEVEL_WORD_BITS: u64 = 64;
/// Bits used to tag a batch with its level in the checkpoint.
pub const BATCH_LEVEL_BITS: u32 = 8;

/// Per-level capacities and bit allocations derived from a budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelPlan {
    /// Number of batch levels `L`; level 0 is the pending level.
    pub levels: usize,
    /// `caps[j]` bounds the number of keys held at level `j`.
    pub caps: Vec<usize>,
    /// `allocs[j]` bounds the ledger bits charged to level `j`.
    pub allocs: Vec<u64>,
    /// Retired-slot bitmask plus one word per level.
    pub bookkeeping_bits: u64,
}

pub fn pending_entry_bits(n: usize, universe: u64) -> u64 {
    (ceil_log2(universe) + ceil_log2(n as u64)) as u64
}

pub fn batch_header_bits(n: usize) -> u64 {
    BATCH_LEVEL_BITS as u64 + ceil_log2(n as u64 + 1) as u64
}

pub fn batch_charge(n: usize, size: usize) -> u64 {
    batch_header_bits(n) + mathkit::ceil_log2_binomial(n as u64, size as u64).expect("batch size <= n")
}

fn bookkeeping_bits(n: usize, levels: usize) -> u64 {
    n as u64 + LEVEL_WORD_BITS * (levels as u64 + 1)
}

// Half of what remains after bookkeeping goes to pending entries, the other
// half is shared evenly by the batch levels.
fn split_budget(n: usize, levels: usize, budget: u64) -> Option<(u64, Vec<u64>)> {
    let bk = bookkeeping_bits(n, levels);
    let rest = budget.checked_sub(bk)?;
    if levels == 0 {
        return Some((bk, vec![rest]));
    }
    let pending = rest / 2;
    let each = (rest - pending) / levels as u64;
    let mut allocs = vec![pending];
    allocs.extend(std::iter::repeat_n(each, levels));
    Some((bk, allocs))
}

impl LevelPlan {
    /// Smallest budget any plan accepts: bookkeeping for `L = 0` plus one
    /// pending entry.
    pub fn minimum_budget(n: usize, universe: u64) -> u64 {
        bookkeeping_bits(n, 0) + pending_entry_bits(n, universe)
    }

    /// Chooses the level count minimising the predicted amortized moves
    /// `1 + L + n / caps[L]`.
    ///
    /// `caps[0]` is what the pending allocation can hold. For `j >= 1`,
    /// `caps[j]` is what `allocs[j]` can hold at the per-key charge of a
    /// batch just larger than `caps[j - 1]`; a plan whose caps do not
    /// strictly grow is discarded.
    pub fn for_budget(n: usize, universe: u64, budget: u64) -> Result<Self, DictError> {
        validate_shape(n, universe)?;
        let minimum = Self::minimum_budget(n, universe);
        if budget < minimum {
            return Err(DictError::BudgetTooSmall { budget, minimum });
        }
        let per_pending = pending_entry_bits(n, universe).max(1);
        let header = batch_header_bits(n) as f64;
        let max_levels = mathkit::log_star(n as u64) as usize + 2;

        let mut best: Option<(f64, LevelPlan)> = None;
        'levels: for levels in 0..=max_levels {
            let Some((bk, allocs)) = split_budget(n, levels, budget) else { continue };
            let pending_cap = ((allocs[0] / per_pending) as usize).min(n);
            if pending_cap == 0 {
                continue;
            }
            let mut caps = vec![pending_cap];
            for j in 1..=levels {
                let smallest_batch = caps[j - 1] + 1;
                if smallest_batch > n {
                    continue 'levels;
                }
                let log_c = mathkit::log_binomial(n as u64, smallest_batch as u64).expect("size <= n");
                let per_key = (log_c + header) / smallest_batch as f64;
                let cap = ((allocs[j] as f64 / per_key).floor() as usize).min(n);
                if cap <= caps[j - 1] {
                    continue 'levels;
                }
                caps.push(cap);
            }
            let predicted = 1.0 + levels as f64 + n as f64 / caps[levels] as f64;
            let plan = LevelPlan { levels, caps, allocs, bookkeeping_bits: bk };
            if best.as_ref().is_none_or(|(cost, _)| predicted < *cost) {
                best = Some((predicted, plan));
            }
        }
        best.map(|(_, plan)| plan).ok_or(DictError::BudgetTooSmall { budget, minimum })
    }

    /// A plan with caller-chosen caps (`caps[0]` pending, then one per
    /// level) and the usual bit split of `budget`.
    pub fn with_caps(n: usize, universe: u64, budget: u64, caps: Vec<usize>) -> Result<Self, DictError> {
        validate_shape(n, universe)?;
        if caps.is_empty() || caps[0] == 0 {
            return Err(DictError::BadParameters("pending cap must be positive".into()));
        }
        let levels = caps.len() - 1;
        let (bookkeeping_bits, allocs) = split_budget(n, levels, budget).ok_or(DictError::BudgetTooSmall {
            budget,
            minimum: bookkeeping_bits(n, levels),
        })?;
        Ok(LevelPlan { levels, caps, allocs, bookkeeping_bits })
    }

    pub fn total_allocated(&self) -> u64 {
        self.bookkeeping_bits + self.allocs.iter().sum::<u64>()
    }
}

fn validate_shape(n: usize, universe: u64) -> Result<(), DictError> {
    if n == 0 {
        return Err(DictError::BadParameters("capacity must be at least 1".into()));
    }
    if universe / 2 < n as u64 {
        return Err(DictError::BadParameters(format!("universe {universe} is smaller than 2n = {}", 2 * n)));
    }
    Ok(())
}

/// Sorted key list from the last full rebuild; the key of rank `r` lives in
/// slot `r` until that slot is retired.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BaseSnapshot {
    pub keys: Vec<u64>,
    pub retired: Vec<bool>,
}

/// A group of keys stored in ascending order across an ascending slot set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelBatch {
    pub level: usize,
    pub slot_set: Vec<usize>,
    charge: u64,
}

impl LevelBatch {
    fn new(n: usize, level: usize, slot_set: Vec<usize>) -> Self {
        let charge = batch_charge(n, slot_set.len());
        Self { level, slot_set, charge }
    }

    pub fn size(&self) -> usize {
        self.slot_set.len()
    }

    pub fn charge(&self) -> u64 {
        self.charge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChargeKind {
    Bookkeeping,
    Pending { key: u64 },
    Batch { level: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Charge {
    pub kind: ChargeKind,
    pub bits: u64,
}

/// Itemised auxiliary bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuxLedger {
    pub budget_bits: u64,
    pub charges: Vec<Charge>,
}

impl AuxLedger {
    pub fn total(&self) -> u64 {
        self.charges.iter().map(|c| c.bits).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location {
    Pending(usize),
    Batch { batch: usize, pos: usize },
    Base(usize),
}

#[derive(Debug, Clone)]
pub struct LazySortDict {
    n: usize,
    universe: u64,
    budget: u64,
    plan: LevelPlan,
    pending_bits: u64,
    base: BaseSnapshot,
    pending: HashMap<u64, usize>,
    batches: Vec<LevelBatch>,
    slots: SlotArray,
    empty: BTreeSet<usize>,
    inserts_since_rebuild: usize,
    rebuild_count: u64,
    clock: u64,
}

impl LazySortDict {
    pub fn new(n: usize, universe: u64, budget_bits: u64) -> Result<Self, DictError> {
        let plan = LevelPlan::for_budget(n, universe, budget_bits)?;
        Self::with_plan(n, universe, budget_bits, plan)
    }

    pub fn with_plan(n: usize, universe: u64, budget_bits: u64, plan: LevelPlan) -> Result<Self, DictError> {
        validate_shape(n, universe)?;
        if plan.caps.len() != plan.levels + 1 || plan.allocs.len() != plan.levels + 1 {
            return Err(DictError::BadParameters("plan needs one cap and one allocation per level".into()));
        }
        if plan.total_allocated() > budget_bits {
            return Err(DictError::BudgetTooSmall { budget: budget_bits, minimum: plan.total_allocated() });
        }
        Ok(Self {
            n,
            universe,
            budget: budget_bits,
            pending_bits: pending_entry_bits(n, universe),
            plan,
            base: BaseSnapshot::default(),
            pending: HashMap::new(),
            batches: Vec::new(),
            slots: SlotArray::new(n),
            empty: (0..n).collect(),
            inserts_since_rebuild: 0,
            rebuild_count: 0,
            clock: 0,
        })
    }

    pub fn plan(&self) -> &LevelPlan {
        &self.plan
    }

    pub fn universe(&self) -> u64 {
        self.universe
    }

    pub fn base(&self) -> &BaseSnapshot {
        &self.base
    }

    pub fn batches(&self) -> &[LevelBatch] {
        &self.batches
    }

    /// Pending `(key, slot)` entries ordered by slot.
    pub fn pending(&self) -> Vec<(u64, usize)> {
        let mut out: Vec<(u64, usize)> = self.pending.iter().map(|(&k, &s)| (k, s)).collect();
        out.sort_unstable_by_key(|&(_, s)| s);
        out
    }

    pub fn rebuild_count(&self) -> u64 {
        self.rebuild_count
    }

    pub fn ledger(&self) -> AuxLedger {
        let mut charges = vec![Charge { kind: ChargeKind::Bookkeeping, bits: self.plan.bookkeeping_bits }];
        for (key, _) in self.pending() {
            charges.push(Charge { kind: ChargeKind::Pending { key }, bits: self.pending_bits });
        }
        for b in &self.batches {
            charges.push(Charge { kind: ChargeKind::Batch { level: b.level, size: b.size() }, bits: b.charge });
        }
        AuxLedger { budget_bits: self.budget, charges }
    }

    pub fn aux_bits(&self) -> u64 {
        self.plan.bookkeeping_bits
            + self.pending.len() as u64 * self.pending_bits
            + self.batches.iter().map(|b| b.charge).sum::<u64>()
    }

    /// Keys held at each level; index 0 is the pending level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.plan.levels + 1];
        counts[0] = self.pending.len();
        for b in &self.batches {
            counts[b.level] += b.size();
        }
        counts
    }

    fn level_bits(&self) -> Vec<u64> {
        let mut bits = vec![0; self.plan.levels + 1];
        bits[0] = self.pending.len() as u64 * self.pending_bits;
        for b in &self.batches {
            bits[b.level] += b.charge;
        }
        bits
    }

    fn check_key(&self, key: u64) -> Result<(), DictError> {
        if key >= self.universe {
            return Err(DictError::KeyOutOfUniverse { key, universe: self.universe });
        }
        Ok(())
    }

    fn batch_key(&self, slot: usize) -> u64 {
        self.slots.get(slot).expect("batch slots are always occupied")
    }

    // Pending map, then each batch by binary search over its slot set,
    // then the base snapshot.
    fn locate(&self, key: u64) -> Option<Location> {
        if let Some(&slot) = self.pending.get(&key) {
            return Some(Location::Pending(slot));
        }
        for (i, b) in self.batches.iter().enumerate() {
            if let Ok(pos) = b.slot_set.binary_search_by(|&s| self.batch_key(s).cmp(&key)) {
                return Some(Location::Batch { batch: i, pos });
            }
        }
        match self.base.keys.binary_search(&key) {
            Ok(rank) if !self.base.retired[rank] => Some(Location::Base(rank)),
            _ => None,
        }
    }

    fn slot_of_location(&self, loc: Location) -> usize {
        match loc {
            Location::Pending(slot) => slot,
            Location::Batch { batch, pos } => self.batches[batch].slot_set[pos],
            Location::Base(rank) => rank,
        }
    }

    pub fn bulk_init_with_values(&mut self, entries: &[(u64, u64)]) -> Result<(), DictError> {
        if !self.slots.is_empty() {
            return Err(DictError::NotEmpty);
        }
        if entries.len() > self.n {
            return Err(DictError::TooManyKeys { capacity: self.n, got: entries.len() });
        }
        let mut sorted = entries.to_vec();
        sorted.sort_unstable_by_key(|&(k, _)| k);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DictError::KeyPresent(w[0].0));
            }
        }
        for &(k, _) in &sorted {
            self.check_key(k)?;
        }
        for (slot, &(key, value)) in sorted.iter().enumerate() {
            self.slots.place_with_value(key, value, slot, self.clock)?;
        }
        let m = sorted.len();
        self.base = BaseSnapshot { keys: sorted.into_iter().map(|(k, _)| k).collect(), retired: vec![false; m] };
        self.pending.clear();
        self.batches.clear();
        self.empty = (m..self.n).collect();
        self.inserts_since_rebuild = 0;
        Ok(())
    }

    pub fn insert_with_value(&mut self, key: u64, value: u64) -> Result<(), DictError> {
        self.check_key(key)?;
        if self.slots.contains(key) {
            return Err(DictError::KeyPresent(key));
        }
        let slot = *self.empty.iter().next().ok_or(DictError::Full(self.n))?;
        self.slots.place_with_value(key, value, slot, self.clock)?;
        self.empty.remove(&slot);
        self.pending.insert(key, slot);
        self.inserts_since_rebuild += 1;
        self.cascade_flush()
    }

    /// Value stored alongside `key`.
    pub fn get(&self, key: u64) -> Option<u64> {
        let loc = self.locate(key)?;
        self.slots.value(self.slot_of_location(loc))
    }

    /// Restores the budget and level caps after an update.
    ///
    /// Finds the lowest level that is over its key cap or bit allocation
    /// and merges it with everything below into one batch one level up;
    /// repeats until nothing overflows. An overflowing top level, or `n`
    /// inserts since the last rebuild, ends in a full rebuild.
    fn cascade_flush(&mut self) -> Result<(), DictError> {
        loop {
            if self.inserts_since_rebuild >= self.n {
                return self.full_rebuild();
            }
            let counts = self.level_counts();
            let bits = self.level_bits();
            let over = (0..=self.plan.levels).find(|&j| counts[j] > self.plan.caps[j] || bits[j] > self.plan.allocs[j]);
            match over {
                None => return Ok(()),
                Some(j) if j == self.plan.levels => return self.full_rebuild(),
                Some(j) => self.merge_up_to(j)?,
            }
        }
    }

    /// Merges every level up to `level` into a single batch at
    /// `level + 1`, or rebuilds if `level` is the top.
    pub fn force_flush(&mut self, level: usize) -> Result<(), DictError> {
        if level >= self.plan.levels {
            self.full_rebuild()
        } else {
            self.merge_up_to(level)?;
            self.cascade_flush()
        }
    }

    fn merge_up_to(&mut self, level: usize) -> Result<(), DictError> {
        let mut entries: Vec<(u64, usize)> = self.pending.drain().collect();
        let (merged, kept): (Vec<LevelBatch>, Vec<LevelBatch>) =
            std::mem::take(&mut self.batches).into_iter().partition(|b| b.level <= level);
        self.batches = kept;
        for b in &merged {
            entries.extend(b.slot_set.iter().map(|&s| (self.batch_key(s), s)));
        }
        if entries.is_empty() {
            return Ok(());
        }
        let mut targets: Vec<usize> = entries.iter().map(|&(_, s)| s).collect();
        targets.sort_unstable();
        entries.sort_unstable_by_key(|&(k, _)| k);
        let plan: Vec<(usize, usize)> = entries.iter().zip(&targets).map(|(&(_, from), &to)| (from, to)).collect();
        self.slots.rearrange(&plan, self.clock)?;
        self.batches.push(LevelBatch::new(self.n, level + 1, targets));
        self.batches.sort_by_key(|b| b.level);
        Ok(())
    }

    /// Re-sorts every stored key into the slot equal to its rank and clears
    /// all lazy state.
    pub fn full_rebuild(&mut self) -> Result<(), DictError> {
        let mut entries: Vec<(u64, usize)> = self
            .slots
            .contents()
            .iter()
            .enumerate()
            .filter_map(|(s, k)| k.map(|k| (k, s)))
            .collect();
        entries.sort_unstable_by_key(|&(k, _)| k);
        let plan: Vec<(usize, usize)> = entries.iter().enumerate().map(|(rank, &(_, from))| (from, rank)).collect();
        self.slots.rearrange(&plan, self.clock)?;
        let m = entries.len();
        self.base = BaseSnapshot { keys: entries.into_iter().map(|(k, _)| k).collect(), retired: vec![false; m] };
        self.pending.clear();
        self.batches.clear();
        self.empty = (m..self.n).collect();
        self.inserts_since_rebuild = 0;
        self.rebuild_count += 1;
        Ok(())
    }

    /// Exhaustive consistency check used by tests and verification runs.
    pub fn verify_structure(&self) -> Result<(), String> {
        let mut claimed = vec![false; self.n];
        let mut claim = |slot: usize, what: &str| -> Result<(), String> {
            if std::mem::replace(&mut claimed[slot], true) {
                return Err(format!("slot {slot} claimed twice ({what})"));
            }
            Ok(())
        };
        for (&key, &slot) in &self.pending {
            if self.slots.get(slot) != Some(key) {
                return Err(format!("pending key {key} is not in slot {slot}"));
            }
            claim(slot, "pending")?;
        }
        for b in &self.batches {
            if b.level == 0 || b.level > self.plan.levels {
                return Err(format!("batch at invalid level {}", b.level));
            }
            if b.slot_set.is_empty() || b.charge != batch_charge(self.n, b.size()) {
                return Err("batch is empty or carries a stale charge".into());
            }
            for w in b.slot_set.windows(2) {
                if w[0] >= w[1] || self.batch_key(w[0]) >= self.batch_key(w[1]) {
                    return Err(format!("batch order broken at slots {} and {}", w[0], w[1]));
                }
            }
            for &s in &b.slot_set {
                claim(s, "batch")?;
            }
        }
        for (rank, (&key, &retired)) in self.base.keys.iter().zip(&self.base.retired).enumerate() {
            if !retired {
                if self.slots.get(rank) != Some(key) {
                    return Err(format!("base key {key} is not in slot {rank}"));
                }
                claim(rank, "base")?;
            }
        }
        for (slot, content) in self.slots.contents().iter().enumerate() {
            match (content, claimed[slot], self.empty.contains(&slot)) {
                (Some(k), false, _) => return Err(format!("key {k} in slot {slot} is unaccounted for")),
                (None, true, _) => return Err(format!("slot {slot} is claimed but empty")),
                (None, false, false) => return Err(format!("empty slot {slot} is not tracked")),
                (Some(_), _, true) => return Err(format!("occupied slot {slot} is marked empty")),
                _ => {}
            }
        }
        let aux = self.aux_bits();
        if aux != self.ledger().total() {
            return Err("ledger total disagrees with aux_bits".into());
        }
        if aux > self.budget {
            return Err(format!("aux bits {aux} exceed budget {}", self.budget));
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut batches: Vec<(usize, SubsetRank)> = self
            .batches
            .iter()
            .map(|b| (b.level, mathkit::subset_rank(&b.slot_set, self.n).expect("slot sets are sorted and in range")))
            .collect();
        batches.sort_by_key(|(level, _)| *level);
        let mut retired = vec![false; self.n];
        retired[..self.base.retired.len()].copy_from_slice(&self.base.retired);
        Checkpoint {
            n: self.n,
            universe: self.universe,
            budget: self.budget,
            levels: self.plan.levels,
            base_keys: self.base.keys.clone(),
            retired,
            pending: self.pending(),
            batches,
        }
    }
}

impl Dictionary for LazySortDict {
    fn name(&self) -> &'static str {
        "lazysort"
    }

    fn capacity(&self) -> usize {
        self.n
    }

    fn len(&self) -> usize {
        self.slots.len()
    }

    fn bulk_init(&mut self, keys: &[u64]) -> Result<(), DictError> {
        let entries: Vec<(u64, u64)> = keys.iter().map(|&k| (k, 0)).collect();
        self.bulk_init_with_values(&entries)
    }

    fn insert(&mut self, key: u64) -> Result<(), DictError> {
        self.insert_with_value(key, 0)
    }

    fn delete(&mut self, key: u64) -> Result<(), DictError> {
        let loc = self.locate(key).ok_or(DictError::KeyAbsent(key))?;
        let slot = self.slot_of_location(loc);
        match loc {
            Location::Pending(_) => {
                self.pending.remove(&key);
            }
            Location::Batch { batch, pos } => {
                let b = &mut self.batches[batch];
                b.slot_set.remove(pos);
                if b.slot_set.is_empty() {
                    self.batches.remove(batch);
                } else {
                    b.charge = batch_charge(self.n, b.size());
                }
            }
            Location::Base(rank) => self.base.retired[rank] = true,
        }
        self.slots.evict(slot, self.clock)?;
        self.empty.insert(slot);
        self.cascade_flush()
    }

    fn query(&self, key: u64) -> Lookup {
        match self.locate(key) {
            Some(loc) => Lookup::hit(self.slot_of_location(loc)),
            None => Lookup::MISS,
        }
    }

    fn stats(&self) -> DictStats {
        DictStats {
            move_count: self.slots.move_count(),
            aux_bits: self.aux_bits(),
            level_counts: self.level_counts(),
            rebuild_count: self.rebuild_count,
            stored: self.slots.len(),
            space_bits: None,
        }
    }

    fn budget_bits(&self) -> Option<u64> {
        Some(self.budget)
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

/// Serialized auxiliary state.
///
/// Bit layout, LSB first:
///
/// | field | bits |
/// |---|---|
/// | header: `n`, `U`, budget, `L` | 4 x 64 |
/// | base count | 64 |
/// | base keys | count x `ceil(log2 U)` |
/// | retired bitmask | `n` |
/// | entry count per level `0..=L` | (L + 1) x 64 |
/// | pending `(key, slot)` by slot | `ceil(log2 U) + ceil(log2 n)` each |
/// | per batch: level, size, subset rank | `8 + ceil(log2(n+1)) + ceil(log2 C(n, size))` |
///
/// Everything after the base keys is exactly what the ledger charges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub n: usize,
    pub universe: u64,
    pub budget: u64,
    pub levels: usize,
    pub base_keys: Vec<u64>,
    pub retired: Vec<bool>,
    pub pending: Vec<(u64, usize)>,
    pub batches: Vec<(usize, SubsetRank)>,
}

pub const CHECKPOINT_HEADER_BITS: u64 = 4 * 64;

impl Checkpoint {
    pub fn base_storage_bits(&self) -> u64 {
        64 + self.base_keys.len() as u64 * ceil_log2(self.universe) as u64
    }

    pub fn encode(&self) -> (Vec<u8>, u64) {
        let key_bits = ceil_log2(self.universe);
        let slot_bits = ceil_log2(self.n as u64);
        let size_bits = ceil_log2(self.n as u64 + 1);
        let mut w = BitWriter::new();
        w.write(self.n as u64, 64);
        w.write(self.universe, 64);
        w.write(self.budget, 64);
        w.write(self.levels as u64, 64);
        w.write(self.base_keys.len() as u64, 64);
        for &k in &self.base_keys {
            w.write(k, key_bits);
        }
        for &r in &self.retired {
            w.push_bit(r);
        }
        let mut per_level = vec![0u64; self.levels + 1];
        per_level[0] = self.pending.len() as u64;
        for (level, _) in &self.batches {
            per_level[*level] += 1;
        }
        for c in per_level {
            w.write(c, LEVEL_WORD_BITS as u32);
        }
        for &(k, s) in &self.pending {
            w.write(k, key_bits);
            w.write(s as u64, slot_bits);
        }
        for (level, code) in &self.batches {
            w.write(*level as u64, BATCH_LEVEL_BITS);
            w.write(code.subset_size as u64, size_bits);
            w.write_big(&code.rank, code.bit_len());
        }
        let len = w.bit_len();
        (w.into_bytes(), len)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DictError> {
        let eof = || DictError::Checkpoint("unexpected end of data".into());
        let mut r = BitReader::new(bytes);
        let n = r.read(64).ok_or_else(eof)? as usize;
        let universe = r.read(64).ok_or_else(eof)?;
        let budget = r.read(64).ok_or_else(eof)?;
        let levels = r.read(64).ok_or_else(eof)? as usize;
        if n == 0 || levels > 64 {
            return Err(DictError::Checkpoint(format!("implausible header n={n} L={levels}")));
        }
        let key_bits = ceil_log2(universe);
        let slot_bits = ceil_log2(n as u64);
        let size_bits = ceil_log2(n as u64 + 1);
        let base_len = r.read(64).ok_or_else(eof)? as usize;
        if base_len > n {
            return Err(DictError::Checkpoint("base larger than capacity".into()));
        }
        let base_keys = (0..base_len).map(|_| r.read(key_bits).ok_or_else(eof)).collect::<Result<Vec<_>, _>>()?;
        let retired = (0..n).map(|_| r.read_bit().ok_or_else(eof)).collect::<Result<Vec<_>, _>>()?;
        let per_level = (0..=levels).map(|_| r.read(64).ok_or_else(eof)).collect::<Result<Vec<_>, _>>()?;
        let mut pending = Vec::with_capacity(per_level[0] as usize);
        for _ in 0..per_level[0] {
            let k = r.read(key_bits).ok_or_else(eof)?;
            let s = r.read(slot_bits).ok_or_else(eof)? as usize;
            pending.push((k, s));
        }
        let mut batches = Vec::new();
        for (expected_level, &count) in per_level.iter().enumerate().skip(1) {
            for _ in 0..count {
                let level = r.read(BATCH_LEVEL_BITS).ok_or_else(eof)? as usize;
                if level != expected_level {
                    return Err(DictError::Checkpoint(format!("batch tagged level {level}, expected {expected_level}")));
                }
                let size = r.read(size_bits).ok_or_else(eof)? as usize;
                if size > n {
                    return Err(DictError::Checkpoint("batch larger than capacity".into()));
                }
                let width = mathkit::ceil_log2_binomial(n as u64, size as u64).expect("size <= n");
                let rank = r.read_big(width).ok_or_else(eof)?;
                batches.push((level, SubsetRank { universe_size: n, subset_size: size, rank }));
            }
        }
        Ok(Self { n, universe, budget, levels, base_keys, retired, pending, batches })
    }

    /// Rebuilds the slot-to-key map. `read_slot` is consulted only for
    /// slots that belong to a batch.
    pub fn reconstruct(&self, mut read_slot: impl FnMut(usize) -> Option<u64>) -> Result<Vec<Option<u64>>, DictError> {
        let mut map = vec![None; self.n];
        for (rank, &key) in self.base_keys.iter().enumerate() {
            if !self.retired[rank] {
                map[rank] = Some(key);
            }
        }
        for &(key, slot) in &self.pending {
            if slot >= self.n {
                return Err(DictError::Checkpoint(format!("pending slot {slot} out of range")));
            }
            map[slot] = Some(key);
        }
        for (_, code) in &self.batches {
            let slots = mathkit::subset_unrank(code).map_err(|e| DictError::Checkpoint(e.to_string()))?;
            for s in slots {
                map[s] = read_slot(s);
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roomy(n: usize, universe: u64, caps: Vec<usize>) -> LazySortDict {
        let plan = LevelPlan::with_caps(n, universe, 1 << 20, caps).unwrap();
        LazySortDict::with_plan(n, universe, 1 << 20, plan).unwrap()
    }

    fn contents(d: &LazySortDict) -> Vec<Option<u64>> {
        d.slots().contents().to_vec()
    }

    #[test]
    fn create_examples() {
        let d = LazySortDict::new(8, 64, 512).unwrap();
        assert_eq!(d.len(), 0);
        assert_eq!(d.stats().move_count, 0);
        assert_eq!(d.aux_bits(), d.plan().bookkeeping_bits);
        match LazySortDict::new(8, 64, 1) {
            Err(DictError::BudgetTooSmall { minimum, .. }) => assert_eq!(minimum, 8 + 64 + 9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(LazySortDict::new(8, 15, 512).is_err());
        assert!(LazySortDict::new(0, 15, 512).is_err());
    }

    #[test]
    fn plan_for_desk_scale_budgets() {
        let n = 1usize << 16;
        for k in 1..=3u32 {
            let per_key = mathkit::iter_log(n as u64, k).unwrap().ceil() as u64;
            let plan = LevelPlan::for_budget(n, 1 << 32, n as u64 * per_key).unwrap();
            assert!(plan.caps.windows(2).all(|w| w[0] < w[1]));
            assert!(plan.total_allocated() <= n as u64 * per_key);
        }
        // with 4 bits per key at n = 2^16 a single batch level is optimal
        let plan = LevelPlan::for_budget(n, 1 << 32, 65536 * 4).unwrap();
        assert_eq!(plan.levels, 1);
        // (262144 - 65536 - 2 * 64) / 2 bits at 32 + 16 bits per pending key
        assert_eq!(plan.caps[0], 98240 / 48);
    }

    #[test]
    fn bulk_init_sorts() {
        let mut d = LazySortDict::new(3, 64, 512).unwrap();
        d.bulk_init(&[5, 2, 9]).unwrap();
        assert_eq!(contents(&d), vec![Some(2), Some(5), Some(9)]);
        assert_eq!(d.stats().move_count, 3);
        assert_eq!(d.aux_bits(), d.plan().bookkeeping_bits);
        assert_eq!(d.query(2), Lookup::hit(0));
        assert_eq!(d.query(5), Lookup::hit(1));
        assert_eq!(d.query(9), Lookup::hit(2));
        assert_eq!(d.query(3), Lookup::MISS);

        let mut d = LazySortDict::new(3, 64, 512).unwrap();
        assert_eq!(d.bulk_init(&[5, 2, 5]), Err(DictError::KeyPresent(5)));
        assert!(matches!(d.bulk_init(&[1, 2, 3, 4]), Err(DictError::TooManyKeys { .. })));
        d.bulk_init(&[1]).unwrap();
        assert_eq!(d.bulk_init(&[2]), Err(DictError::NotEmpty));
    }

    #[test]
    fn delete_then_insert_reuses_slot() {
        let mut d = roomy(3, 64, vec![2]);
        d.bulk_init(&[2, 5, 9]).unwrap();
        d.delete(5).unwrap();
        assert_eq!(contents(&d), vec![Some(2), None, Some(9)]);
        assert_eq!(d.base().retired, vec![false, true, false]);
        assert_eq!(d.delete(5), Err(DictError::KeyAbsent(5)));
        d.insert(7).unwrap();
        assert_eq!(contents(&d), vec![Some(2), Some(7), Some(9)]);
        assert_eq!(d.pending(), vec![(7, 1)]);
        assert_eq!(d.insert(7), Err(DictError::KeyPresent(7)));
        assert_eq!(d.insert(8), Err(DictError::Full(3)));
        assert!(matches!(d.insert(64), Err(DictError::KeyOutOfUniverse { .. })));
    }

    #[test]
    fn pending_ledger_arithmetic() {
        let mut d = roomy(8, 64, vec![4]);
        d.bulk_init(&[1, 2, 3, 4, 5, 6, 7]).unwrap();
        let empty = d.aux_bits();
        d.insert(40).unwrap();
        assert_eq!(d.aux_bits(), empty + 6 + 3);
        d.delete(40).unwrap();
        assert_eq!(d.aux_bits(), empty);
    }

    #[test]
    fn flush_sorts_pending_among_their_slots() {
        let mut d = roomy(4, 64, vec![2, 4]);
        d.bulk_init(&[10, 20, 30, 40]).unwrap();
        d.delete(20).unwrap();
        d.insert(7).unwrap();
        d.delete(40).unwrap();
        d.insert(6).unwrap();
        assert_eq!(d.pending(), vec![(7, 1), (6, 3)]);
        let before = d.stats().move_count;
        d.force_flush(0).unwrap();
        assert_eq!(d.stats().move_count - before, 2);
        assert_eq!(contents(&d), vec![Some(10), Some(6), Some(30), Some(7)]);
        assert_eq!(d.batches().len(), 1);
        assert_eq!(d.batches()[0].slot_set, vec![1, 3]);
        assert_eq!(d.batches()[0].level, 1);
        assert!(d.pending().is_empty());
        assert_eq!(d.query(6), Lookup::hit(1));
        assert_eq!(d.query(7), Lookup::hit(3));
        d.verify_structure().unwrap();
    }

    #[test]
    fn sorted_pending_flushes_without_moves() {
        let mut d = roomy(4, 64, vec![2, 4]);
        d.bulk_init(&[10, 20, 30, 40]).unwrap();
        d.delete(20).unwrap();
        d.insert(6).unwrap();
        d.delete(40).unwrap();
        d.insert(7).unwrap();
        let before = d.stats().move_count;
        d.force_flush(0).unwrap();
        assert_eq!(d.stats().move_count, before);
        assert_eq!(d.batches().len(), 1);
    }

    #[test]
    fn third_insert_over_cap_triggers_flush() {
        let mut d = roomy(8, 64, vec![2, 8]);
        d.bulk_init(&[10, 11, 12, 13, 14, 15, 16, 17]).unwrap();
        for (old, new) in [(11, 50), (13, 3), (16, 30)] {
            d.delete(old).unwrap();
            d.insert(new).unwrap();
        }
        assert!(d.pending().is_empty());
        assert_eq!(d.batches().len(), 1);
        assert_eq!(d.batches()[0].slot_set, vec![1, 3, 6]);
        assert_eq!(contents(&d)[1], Some(3));
        assert_eq!(contents(&d)[3], Some(30));
        assert_eq!(contents(&d)[6], Some(50));
        d.verify_structure().unwrap();
    }

    #[test]
    fn batched_key_deletion_shrinks_batch() {
        let mut d = roomy(8, 64, vec![2, 8]);
        d.bulk_init(&[10, 11, 12, 13, 14, 15, 16, 17]).unwrap();
        for (old, new) in [(11, 50), (13, 3), (16, 30)] {
            d.delete(old).unwrap();
            d.insert(new).unwrap();
        }
        let before = d.aux_bits();
        d.delete(30).unwrap();
        assert_eq!(d.batches()[0].slot_set, vec![1, 6]);
        assert_eq!(before - d.aux_bits(), batch_charge(8, 3) - batch_charge(8, 2));
        d.delete(3).unwrap();
        d.delete(50).unwrap();
        assert!(d.batches().is_empty());
        d.verify_structure().unwrap();
    }

    #[test]
    fn full_rebuild_resets_lazy_state() {
        let mut d = roomy(4, 64, vec![1, 4]);
        d.bulk_init(&[10, 20, 30, 40]).unwrap();
        d.delete(20).unwrap();
        d.insert(45).unwrap();
        d.delete(30).unwrap();
        d.insert(5).unwrap();
        d.delete(40).unwrap();
        d.insert(25).unwrap();
        assert!(!d.batches().is_empty() || !d.pending().is_empty());
        d.full_rebuild().unwrap();
        assert_eq!(d.base().keys, vec![5, 10, 25, 45]);
        assert_eq!(contents(&d), vec![Some(5), Some(10), Some(25), Some(45)]);
        assert_eq!(d.aux_bits(), d.plan().bookkeeping_bits);
        let moves = d.stats().move_count;
        d.full_rebuild().unwrap();
        assert_eq!(d.stats().move_count, moves);
    }

    #[test]
    fn aux_bits_of_batch() {
        assert_eq!(batch_charge(16, 4), batch_header_bits(16) + 11);
        let mut d = roomy(16, 256, vec![3, 16]);
        d.bulk_init(&(100..116).collect::<Vec<u64>>()).unwrap();
        for (old, new) in [(101, 7), (105, 200), (109, 3), (113, 150)] {
            d.delete(old).unwrap();
            d.insert(new).unwrap();
        }
        assert_eq!(d.batches().len(), 1);
        assert_eq!(d.aux_bits(), d.plan().bookkeeping_bits + 11 + batch_header_bits(16));
    }

    #[test]
    fn values_follow_keys() {
        let mut d = roomy(4, 64, vec![1, 4]);
        d.bulk_init_with_values(&[(10, 1), (20, 2), (30, 3), (40, 4)]).unwrap();
        d.delete(20).unwrap();
        d.insert_with_value(45, 9).unwrap();
        d.delete(40).unwrap();
        d.insert_with_value(5, 8).unwrap();
        d.full_rebuild().unwrap();
        assert_eq!(d.get(5), Some(8));
        assert_eq!(d.get(45), Some(9));
        assert_eq!(d.get(30), Some(3));
        assert_eq!(d.get(20), None);
    }

    #[test]
    fn checkpoint_roundtrip_accounts_every_bit() {
        let mut d = roomy(16, 256, vec![2, 5, 16]);
        d.bulk_init(&(100..116).collect::<Vec<u64>>()).unwrap();
        for (old, new) in [(101, 7), (105, 200), (109, 3), (113, 150), (102, 90), (110, 20)] {
            d.delete(old).unwrap();
            d.insert(new).unwrap();
        }
        let cp = d.checkpoint();
        let (bytes, bits) = cp.encode();
        assert_eq!(bits, CHECKPOINT_HEADER_BITS + cp.base_storage_bits() + d.aux_bits());
        let decoded = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(decoded, cp);
        let batch_slots: std::collections::HashSet<usize> =
            d.batches().iter().flat_map(|b| b.slot_set.iter().copied()).collect();
        let map = decoded
            .reconstruct(|s| {
                assert!(batch_slots.contains(&s), "read non-batch slot {s}");
                d.slots().get(s)
            })
            .unwrap();
        assert_eq!(map, contents(&d));
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let mut d = roomy(8, 64, vec![2, 8]);
        d.bulk_init(&[1, 2, 3]).unwrap();
        let (bytes, _) = d.checkpoint().encode();
        assert!(Checkpoint::decode(&bytes[..10]).is_err());
        assert!(Checkpoint::decode(&[]).is_err());
    }
}
