//! Instrumented storage substrates.
//!
//! [`SlotArray`] charges one unit per key move and logs every slot a move
//! touches. [`CellMemory`] charges one unit per word probe. Both tag trace
//! entries with the current meta-operation index.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::mathkit;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SlotError {
    #[error("slot {slot} is out of range (capacity {capacity})")]
    SlotOutOfRange { slot: usize, capacity: usize },
    #[error("slot {0} is empty")]
    EmptySlot(usize),
    #[error("slot {slot} already holds key {key}")]
    OccupiedSlot { slot: usize, key: u64 },
    #[error("key {key} already resides in slot {slot}")]
    DuplicateKey { key: u64, slot: usize },
    #[error("invalid rearrangement: {0}")]
    BadRearrangement(String),
    #[error("time {time} precedes last recorded time {last}")]
    TimeWentBackwards { time: u64, last: u64 },
    #[error("cell {cell} is out of range ({cells} cells)")]
    CellOutOfRange { cell: usize, cells: usize },
    #[error("word {word:#x} does not fit in {bits} bits")]
    WordTooWide { word: u64, bits: u32 },
    #[error("word size must be in 1..=64, got {0}")]
    BadWordSize(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TouchKind {
    /// A key moved into the slot.
    Arrive,
    /// A key left the slot (moved away or deleted).
    Depart,
    /// The slot took part in a two-slot exchange.
    Exchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotTouch {
    pub time: u64,
    pub slot: usize,
    pub kind: TouchKind,
}

/// Append-only log of slot touches with non-decreasing times.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessTrace {
    entries: Vec<SlotTouch>,
    last_time: u64,
}

impl AccessTrace {
    pub fn entries(&self) -> &[SlotTouch] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Move units implied by the log: one per arrival, one per exchange pair.
    pub fn move_units(&self) -> u64 {
        let mut arrivals = 0u64;
        let mut exchanges = 0u64;
        for e in &self.entries {
            match e.kind {
                TouchKind::Arrive => arrivals += 1,
                TouchKind::Exchange => exchanges += 1,
                TouchKind::Depart => {}
            }
        }
        arrivals + exchanges / 2
    }

    /// `(time, address)` pairs for probe accounting.
    pub fn touches(&self) -> Vec<(u64, u64)> {
        self.entries.iter().map(|e| (e.time, e.slot as u64)).collect()
    }

    fn check_time(&self, time: u64) -> Result<(), SlotError> {
        if time < self.last_time {
            return Err(SlotError::TimeWentBackwards { time, last: self.last_time });
        }
        Ok(())
    }

    fn push(&mut self, time: u64, slot: usize, kind: TouchKind) {
        self.last_time = time;
        self.entries.push(SlotTouch { time, slot, kind });
    }

    /// Removes and returns all entries, keeping the time floor.
    pub fn drain(&mut self) -> Vec<SlotTouch> {
        std::mem::take(&mut self.entries)
    }
}

/// `n` atomic key slots. Each slot also carries a value word that travels
/// with its key at no extra cost.
#[derive(Debug, Clone)]
pub struct SlotArray {
    contents: Vec<Option<u64>>,
    values: Vec<u64>,
    positions: HashMap<u64, usize>,
    move_count: u64,
    trace: AccessTrace,
}

impl SlotArray {
    pub fn new(capacity: usize) -> Self {
        Self {
            contents: vec![None; capacity],
            values: vec![0; capacity],
            positions: HashMap::with_capacity(capacity),
            move_count: 0,
            trace: AccessTrace::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.contents.len()
    }

    /// Number of occupied slots.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn get(&self, slot: usize) -> Option<u64> {
        self.contents.get(slot).copied().flatten()
    }

    pub fn value(&self, slot: usize) -> Option<u64> {
        self.get(slot).map(|_| self.values[slot])
    }

    pub fn slot_of(&self, key: u64) -> Option<usize> {
        self.positions.get(&key).copied()
    }

    pub fn contains(&self, key: u64) -> bool {
        self.positions.contains_key(&key)
    }

    pub fn move_count(&self) -> u64 {
        self.move_count
    }

    pub fn trace(&self) -> &AccessTrace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut AccessTrace {
        &mut self.trace
    }

    /// Snapshot of every slot's key.
    pub fn contents(&self) -> &[Option<u64>] {
        &self.contents
    }

    fn check_slot(&self, slot: usize) -> Result<(), SlotError> {
        if slot >= self.contents.len() {
            return Err(SlotError::SlotOutOfRange { slot, capacity: self.contents.len() });
        }
        Ok(())
    }

    pub fn place(&mut self, key: u64, slot: usize, time: u64) -> Result<(), SlotError> {
        self.place_with_value(key, 0, slot, time)
    }

    /// Puts a new key into an empty slot. Counts as one move.
    pub fn place_with_value(&mut self, key: u64, value: u64, slot: usize, time: u64) -> Result<(), SlotError> {
        self.check_slot(slot)?;
        self.trace.check_time(time)?;
        if let Some(existing) = self.contents[slot] {
            return Err(SlotError::OccupiedSlot { slot, key: existing });
        }
        if let Some(&at) = self.positions.get(&key) {
            return Err(SlotError::DuplicateKey { key, slot: at });
        }
        self.contents[slot] = Some(key);
        self.values[slot] = value;
        self.positions.insert(key, slot);
        self.move_count += 1;
        self.trace.push(time, slot, TouchKind::Arrive);
        Ok(())
    }

    /// Removes the key in `slot`. Free in moves, but logged.
    pub fn evict(&mut self, slot: usize, time: u64) -> Result<u64, SlotError> {
        self.check_slot(slot)?;
        self.trace.check_time(time)?;
        let key = self.contents[slot].take().ok_or(SlotError::EmptySlot(slot))?;
        self.positions.remove(&key);
        self.trace.push(time, slot, TouchKind::Depart);
        Ok(key)
    }

    pub fn move_key(&mut self, from: usize, to: usize, time: u64) -> Result<(), SlotError> {
        self.check_slot(from)?;
        self.check_slot(to)?;
        self.trace.check_time(time)?;
        let key = self.contents[from].ok_or(SlotError::EmptySlot(from))?;
        if let Some(existing) = self.contents[to] {
            return Err(SlotError::OccupiedSlot { slot: to, key: existing });
        }
        self.contents[from] = None;
        self.contents[to] = Some(key);
        self.values[to] = self.values[from];
        self.positions.insert(key, to);
        self.move_count += 1;
        self.trace.push(time, from, TouchKind::Depart);
        self.trace.push(time, to, TouchKind::Arrive);
        Ok(())
    }

    /// Exchanges two occupied slots; one move unit.
    pub fn swap(&mut self, a: usize, b: usize, time: u64) -> Result<(), SlotError> {
        self.check_slot(a)?;
        self.check_slot(b)?;
        self.trace.check_time(time)?;
        let ka = self.contents[a].ok_or(SlotError::EmptySlot(a))?;
        let kb = self.contents[b].ok_or(SlotError::EmptySlot(b))?;
        if a == b {
            return Ok(());
        }
        self.contents.swap(a, b);
        self.values.swap(a, b);
        self.positions.insert(ka, b);
        self.positions.insert(kb, a);
        self.move_count += 1;
        self.trace.push(time, a, TouchKind::Exchange);
        self.trace.push(time, b, TouchKind::Exchange);
        Ok(())
    }

    /// Applies a set of simultaneous relocations `(from, to)`.
    ///
    /// Every source must be occupied, sources and destinations must each be
    /// distinct, and a destination must be empty unless it is itself a
    /// source. Each key whose slot changes costs one move. Returns the
    /// number of moves charged.
    pub fn rearrange(&mut self, plan: &[(usize, usize)], time: u64) -> Result<u64, SlotError> {
        self.trace.check_time(time)?;
        let mut sources = std::collections::HashSet::with_capacity(plan.len());
        let mut dests = std::collections::HashSet::with_capacity(plan.len());
        for &(from, to) in plan {
            self.check_slot(from)?;
            self.check_slot(to)?;
            if self.contents[from].is_none() {
                return Err(SlotError::EmptySlot(from));
            }
            if !sources.insert(from) {
                return Err(SlotError::BadRearrangement(format!("slot {from} used twice as a source")));
            }
            if !dests.insert(to) {
                return Err(SlotError::BadRearrangement(format!("slot {to} used twice as a destination")));
            }
        }
        for &(_, to) in plan {
            if self.contents[to].is_some() && !sources.contains(&to) {
                return Err(SlotError::BadRearrangement(format!("destination {to} is occupied by a key that stays put")));
            }
        }

        let moving: Vec<(usize, usize, u64, u64)> = plan
            .iter()
            .filter(|(from, to)| from != to)
            .map(|&(from, to)| (from, to, self.contents[from].unwrap(), self.values[from]))
            .collect();
        for &(from, _, _, _) in &moving {
            self.contents[from] = None;
            self.trace.push(time, from, TouchKind::Depart);
        }
        for &(_, to, key, value) in &moving {
            self.contents[to] = Some(key);
            self.values[to] = value;
            self.positions.insert(key, to);
            self.trace.push(time, to, TouchKind::Arrive);
        }
        self.move_count += moving.len() as u64;
        Ok(moving.len() as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbeEntry {
    pub time: u64,
    pub cell: usize,
    pub kind: ProbeKind,
    /// Word written; zero for reads.
    pub word: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeTrace {
    entries: Vec<ProbeEntry>,
}

impl ProbeTrace {
    pub fn entries(&self) -> &[ProbeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn touches(&self) -> Vec<(u64, u64)> {
        self.entries.iter().map(|e| (e.time, e.cell as u64)).collect()
    }

    /// Distinct cells probed at `time`, ascending.
    pub fn cells_at(&self, time: u64) -> Vec<usize> {
        let mut cells: Vec<usize> = self.entries.iter().filter(|e| e.time == time).map(|e| e.cell).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}

/// `N` words of `w` bits each; every read and write is one probe.
#[derive(Debug, Clone)]
pub struct CellMemory {
    word_bits: u32,
    cells: Vec<u64>,
    trace: ProbeTrace,
}

impl CellMemory {
    pub fn new(cell_count: usize, word_bits: u32) -> Result<Self, SlotError> {
        if word_bits == 0 || word_bits > 64 {
            return Err(SlotError::BadWordSize(word_bits));
        }
        Ok(Self { word_bits, cells: vec![0; cell_count], trace: ProbeTrace::default() })
    }

    /// Sizes memory to `ceil((log2 C(U, n) + R) / w)` cells with
    /// `w = ceil(log2 U)`.
    pub fn from_budget(universe: u64, n: u64, redundancy_bits: u64) -> Result<Self, SlotError> {
        let word_bits = default_word_bits(universe);
        let info = mathkit::log_binomial(universe, n).map_err(|e| SlotError::BadRearrangement(e.to_string()))?;
        let cells = ((info + redundancy_bits as f64) / word_bits as f64).ceil() as usize;
        Self::new(cells, word_bits)
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn trace(&self) -> &ProbeTrace {
        &self.trace
    }

    /// Current contents without probing.
    pub fn snapshot(&self) -> &[u64] {
        &self.cells
    }

    fn check(&self, cell: usize, time: u64) -> Result<(), SlotError> {
        if cell >= self.cells.len() {
            return Err(SlotError::CellOutOfRange { cell, cells: self.cells.len() });
        }
        if let Some(last) = self.trace.entries.last() {
            if time < last.time {
                return Err(SlotError::TimeWentBackwards { time, last: last.time });
            }
        }
        Ok(())
    }

    pub fn read(&mut self, cell: usize, time: u64) -> Result<u64, SlotError> {
        self.check(cell, time)?;
        self.trace.entries.push(ProbeEntry { time, cell, kind: ProbeKind::Read, word: 0 });
        Ok(self.cells[cell])
    }

    pub fn write(&mut self, cell: usize, word: u64, time: u64) -> Result<(), SlotError> {
        self.check(cell, time)?;
        if self.word_bits < 64 && word >> self.word_bits != 0 {
            return Err(SlotError::WordTooWide { word, bits: self.word_bits });
        }
        self.trace.entries.push(ProbeEntry { time, cell, kind: ProbeKind::Write, word });
        self.cells[cell] = word;
        Ok(())
    }

    /// Rebuilds final contents from a trace's writes onto zeroed memory.
    pub fn replay(cell_count: usize, word_bits: u32, trace: &ProbeTrace) -> Result<Self, SlotError> {
        let mut mem = Self::new(cell_count, word_bits)?;
        for e in &trace.entries {
            if e.kind == ProbeKind::Write {
                mem.write(e.cell, e.word, e.time)?;
            }
        }
        Ok(mem)
    }
}

/// `ceil(log2 U)`, at least 1.
pub fn default_word_bits(universe: u64) -> u32 {
    ceil_log2(universe).max(1)
}

pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Trace files: a header line `# n=<slots> N=<cells> w=<word bits>`, then
/// one `time<TAB>address<TAB>kind` record per line with kind `M`, `R` or `W`.
pub mod trace_file {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct TraceHeader {
        pub n: u64,
        pub cells: u64,
        pub word_bits: u32,
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct TraceRecord {
        pub time: u64,
        pub address: u64,
        pub kind: char,
    }

    #[derive(Debug, Error)]
    pub enum TraceFileError {
        #[error("line {line}: {msg}")]
        Parse { line: usize, msg: String },
        #[error(transparent)]
        Io(#[from] io::Error),
    }

    pub fn write_header<W: Write>(out: &mut W, header: &TraceHeader) -> io::Result<()> {
        writeln!(out, "# n={} N={} w={}", header.n, header.cells, header.word_bits)
    }

    pub fn write_slot_touches<W: Write>(out: &mut W, touches: &[SlotTouch]) -> io::Result<()> {
        for t in touches {
            writeln!(out, "{}\t{}\tM", t.time, t.slot)?;
        }
        Ok(())
    }

    pub fn write_probes<W: Write>(out: &mut W, probes: &[ProbeEntry]) -> io::Result<()> {
        for p in probes {
            let kind = match p.kind {
                ProbeKind::Read => 'R',
                ProbeKind::Write => 'W',
            };
            writeln!(out, "{}\t{}\t{}", p.time, p.cell, kind)?;
        }
        Ok(())
    }

    /// Streams slot touches to a writer in bounded chunks.
    pub struct TraceWriter<W: Write> {
        out: W,
        chunk: usize,
    }

    impl<W: Write> TraceWriter<W> {
        pub fn new(mut out: W, header: &TraceHeader, chunk: usize) -> io::Result<Self> {
            write_header(&mut out, header)?;
            Ok(Self { out, chunk: chunk.max(1) })
        }

        /// Drains the trace if it has grown past the chunk size.
        pub fn maybe_flush(&mut self, trace: &mut AccessTrace) -> io::Result<()> {
            if trace.len() >= self.chunk {
                self.flush(trace)?;
            }
            Ok(())
        }

        pub fn flush(&mut self, trace: &mut AccessTrace) -> io::Result<()> {
            let entries = trace.drain();
            write_slot_touches(&mut self.out, &entries)
        }

        pub fn finish(mut self, trace: &mut AccessTrace) -> io::Result<W> {
            self.flush(trace)?;
            self.out.flush()?;
            Ok(self.out)
        }
    }

    pub fn read_trace<R: BufRead>(input: R) -> Result<(TraceHeader, Vec<TraceRecord>), TraceFileError> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or(TraceFileError::Parse { line: 1, msg: "missing header".into() })??;
        let header = parse_header(&first).map_err(|msg| TraceFileError::Parse { line: 1, msg })?;
        let mut records = Vec::new();
        let mut last_time = 0;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| TraceFileError::Parse { line: line_no, msg };
            let mut parts = line.split('\t');
            let time = parts
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| err("bad time field".into()))?;
            let address = parts
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| err("bad address field".into()))?;
            let kind = match parts.next() {
                Some("M") => 'M',
                Some("R") => 'R',
                Some("W") => 'W',
                _ => return Err(err("kind must be M, R or W".into())),
            };
            if parts.next().is_some() {
                return Err(err("trailing fields".into()));
            }
            if time < last_time {
                return Err(err(format!("time {time} decreases")));
            }
            last_time = time;
            records.push(TraceRecord { time, address, kind });
        }
        Ok((header, records))
    }

    fn parse_header(line: &str) -> Result<TraceHeader, String> {
        let rest = line.strip_prefix('#').ok_or("header must start with '#'")?;
        let mut n = None;
        let mut cells = None;
        let mut w = None;
        for field in rest.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or(format!("malformed header field {field:?}"))?;
            let v: u64 = v.parse().map_err(|_| format!("non-numeric header value {v:?}"))?;
            match k {
                "n" => n = Some(v),
                "N" => cells = Some(v),
                "w" => w = Some(v as u32),
                _ => return Err(format!("unknown header field {k:?}")),
            }
        }
        match (n, cells, w) {
            (Some(n), Some(cells), Some(word_bits)) => Ok(TraceHeader { n, cells, word_bits }),
            _ => Err("header needs n=, N= and w=".into()),
        }
    }
}
