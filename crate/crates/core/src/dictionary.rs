//! The interface every instrumented dictionary implements, so the harness
//! can drive them interchangeably.

use serde::Serialize;
use thiserror::Error;

use crate::slot_model::{SlotArray, SlotError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DictError {
    #[error("key {0} is already stored")]
    KeyPresent(u64),
    #[error("key {0} is not stored")]
    KeyAbsent(u64),
    #[error("dictionary is full ({0} keys)")]
    Full(usize),
    #[error("bulk initialisation needs an empty dictionary")]
    NotEmpty,
    #[error("{got} initial keys exceed capacity {capacity}")]
    TooManyKeys { capacity: usize, got: usize },
    #[error("key {key} lies outside universe [0, {universe})")]
    KeyOutOfUniverse { key: u64, universe: u64 },
    #[error("budget of {budget} bits is below the minimum of {minimum} bits")]
    BudgetTooSmall { budget: u64, minimum: u64 },
    #[error("invalid parameters: {0}")]
    BadParameters(String),
    #[error("collision table overflow (capacity {0})")]
    CollisionOverflow(usize),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Slot(#[from] SlotError),
}

/// Result of a membership query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Lookup {
    pub found: bool,
    pub slot: Option<usize>,
}

impl Lookup {
    pub const MISS: Lookup = Lookup { found: false, slot: None };

    pub fn hit(slot: usize) -> Self {
        Self { found: true, slot: Some(slot) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DictStats {
    pub move_count: u64,
    pub aux_bits: u64,
    /// Keys per level; index 0 is the pending level.
    pub level_counts: Vec<usize>,
    pub rebuild_count: u64,
    pub stored: usize,
    /// Total footprint for structures that are not budgeted.
    pub space_bits: Option<u64>,
}

pub trait Dictionary {
    fn name(&self) -> &'static str;

    /// Maximum number of stored keys.
    fn capacity(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bulk_init(&mut self, keys: &[u64]) -> Result<(), DictError>;

    fn insert(&mut self, key: u64) -> Result<(), DictError>;

    fn delete(&mut self, key: u64) -> Result<(), DictError>;

    fn query(&self, key: u64) -> Lookup;

    fn stats(&self) -> DictStats;

    /// Redundancy budget, for structures that have one.
    fn budget_bits(&self) -> Option<u64> {
        None
    }

    /// Sets the meta-operation index stamped on subsequent trace entries.
    fn set_clock(&mut self, time: u64);

    fn slots(&self) -> &SlotArray;

    fn slots_mut(&mut self) -> &mut SlotArray;
}
