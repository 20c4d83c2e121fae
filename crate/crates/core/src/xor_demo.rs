//! Three cells holding `x1 ∈ [0, 3U)`, `x2 ∈ [3U, 4U)`, `x3 ∈ [4U, 5U)`,
//! where the range of `x1` selects which cell absorbs it by XOR:
//!
//! | case | C1 | C2 | C3 |
//! |---|---|---|---|
//! | 1: `x1 ∈ [0, U)` | `x2 ⊕ x1` | `x3` | `x2 ⊕ x3` |
//! | 2: `x1 ∈ [U, 2U)` | `x2` | `x3 ⊕ x1` | `x2 ⊕ x3` |
//! | 3: `x1 ∈ [2U, 3U)` | `x2` | `x3` | `x2 ⊕ x3 ⊕ x1` |
//!
//! Replacing `x1` from case 2 with a case-1 key touches only C1 and C2;
//! replacing it with a case-3 key touches only C2 and C3. Both leave the
//! shared cell C2 holding `x3`.

use serde::Serialize;
use thiserror::Error;

use crate::slot_model::{ceil_log2, CellMemory, SlotError};

const C1: usize = 0;
const C2: usize = 1;
const C3: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XorError {
    #[error("keys are outside the good case for U = {0}")]
    NotGoodCase(u64),
    #[error("transition from case {from} to case {to} is not one of the two demo paths")]
    WrongCase { from: u8, to: u8 },
    #[error("deleted key {given} is not the stored x1")]
    WrongKey { given: u64 },
    #[error(transparent)]
    Memory(#[from] SlotError),
}

pub fn case_of(x1: u64, u: u64) -> Option<u8> {
    match x1 / u {
        0 => Some(1),
        1 => Some(2),
        2 => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct XorCells {
    u: u64,
    /// The O(1)-bit side memory: which case is in force.
    case: u8,
    mem: CellMemory,
}

impl XorCells {
    pub fn new(u: u64, x1: u64, x2: u64, x3: u64) -> Result<Self, XorError> {
        let good = (3 * u..4 * u).contains(&x2) && (4 * u..5 * u).contains(&x3);
        let case = case_of(x1, u).filter(|_| good).ok_or(XorError::NotGoodCase(u))?;
        let mut mem = CellMemory::new(3, ceil_log2(5 * u))?;
        let cells = match case {
            1 => [x2 ^ x1, x3, x2 ^ x3],
            2 => [x2, x3 ^ x1, x2 ^ x3],
            _ => [x2, x3, x2 ^ x3 ^ x1],
        };
        for (i, word) in cells.into_iter().enumerate() {
            mem.write(i, word, 0)?;
        }
        Ok(Self { u, case, mem })
    }

    pub fn case(&self) -> u8 {
        self.case
    }

    pub fn memory(&self) -> &CellMemory {
        &self.mem
    }

    /// All three keys, read straight from the cells without probing.
    pub fn decode(&self) -> (u64, u64, u64) {
        let [c1, c2, c3]: [u64; 3] = self.mem.snapshot().try_into().expect("three cells");
        match self.case {
            1 => {
                let x3 = c2;
                let x2 = c3 ^ x3;
                (c1 ^ x2, x2, x3)
            }
            2 => {
                let x2 = c1;
                let x3 = c3 ^ x2;
                (c2 ^ x3, x2, x3)
            }
            _ => {
                let (x2, x3) = (c1, c2);
                (c3 ^ x2 ^ x3, x2, x3)
            }
        }
    }

    /// Deletes `x1d` (case 2) and inserts `x1_new` (case 1 or 3) as meta-
    /// operation `time`, probing only the two cells that path needs.
    pub fn replace_x1(&mut self, x1d: u64, x1_new: u64, time: u64) -> Result<(), XorError> {
        let to = case_of(x1_new, self.u).unwrap_or(0);
        if self.case != 2 || (to != 1 && to != 3) {
            return Err(XorError::WrongCase { from: self.case, to });
        }
        let x3 = self.mem.read(C2, time)? ^ x1d;
        if !(4 * self.u..5 * self.u).contains(&x3) {
            return Err(XorError::WrongKey { given: x1d });
        }
        if to == 1 {
            let x2 = self.mem.read(C1, time)?;
            self.mem.write(C1, x2 ^ x1_new, time)?;
            self.mem.write(C2, x3, time)?;
        } else {
            let x2 = self.mem.read(C3, time)? ^ x3;
            self.mem.write(C2, x3, time)?;
            self.mem.write(C3, x2 ^ x3 ^ x1_new, time)?;
        }
        self.case = to;
        Ok(())
    }

    /// Cells probed at `time`, named `C1`..`C3`.
    pub fn probed_at(&self, time: u64) -> Vec<String> {
        self.mem.trace().cells_at(time).into_iter().map(|c| format!("C{}", c + 1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct XorDemoReport {
    pub u: u64,
    pub x1d: u64,
    pub x1a: u64,
    pub x1b: u64,
    pub x2: u64,
    pub x3: u64,
    pub probes_a: Vec<String>,
    pub probes_b: Vec<String>,
    pub common: Vec<String>,
    pub cells_a: Vec<u64>,
    pub cells_b: Vec<u64>,
    pub c2_identical: bool,
}

/// Runs both alternative meta-operations from the same starting state.
pub fn run_demo(u: u64, x2: u64, x3: u64, x1d: u64, x1a: u64, x1b: u64) -> Result<XorDemoReport, XorError> {
    let start = XorCells::new(u, x1d, x2, x3)?;
    if start.case() != 2 {
        return Err(XorError::WrongCase { from: start.case(), to: 2 });
    }
    let mut a = start.clone();
    a.replace_x1(x1d, x1a, 1)?;
    let mut b = start;
    b.replace_x1(x1d, x1b, 1)?;
    let probes_a = a.probed_at(1);
    let probes_b = b.probed_at(1);
    let common = probes_a.iter().filter(|c| probes_b.contains(c)).cloned().collect();
    let cells_a = a.memory().snapshot().to_vec();
    let cells_b = b.memory().snapshot().to_vec();
    Ok(XorDemoReport {
        u,
        x1d,
        x1a,
        x1b,
        x2,
        x3,
        probes_a,
        probes_b,
        common,
        c2_identical: cells_a[C2] == cells_b[C2],
        cells_a,
        cells_b,
    })
}
