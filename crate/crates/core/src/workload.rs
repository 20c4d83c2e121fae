//! The hard insert/delete workload and its op-stream file format.
//!
//! A sequence starts with `n` inserts of a uniform random key set `K`, then
//! runs `n` meta-operations. Meta-operation `i` optionally queries `d_i`,
//! deletes `d_i` (drawn uniformly from the not-yet-deleted part of `K`),
//! and inserts a fresh key `a_i` that is neither in `K` nor stored.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("n must be at least 1")]
    EmptyKeySet,
    #[error("universe {universe} is smaller than 3n = {}", 3 * .n)]
    UniverseTooSmall { n: u64, universe: u64 },
    #[error("value universe must be positive")]
    EmptyValueUniverse,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid sequence: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// SplitMix64: state advances by the golden-ratio increment
/// `0x9E3779B97F4A7C15`, output mixed with multipliers
/// `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB` (shifts 30, 27, 31).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw from `[0, bound)` by rejecting the biased low zone.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Insert,
    Delete,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Operation {
    pub kind: OpKind,
    pub key: u64,
    pub value: Option<u64>,
}

impl Operation {
    pub fn insert(key: u64, value: Option<u64>) -> Self {
        Self { kind: OpKind::Insert, key, value }
    }

    pub fn delete(key: u64) -> Self {
        Self { kind: OpKind::Delete, key, value: None }
    }

    pub fn query(key: u64) -> Self {
        Self { kind: OpKind::Query, key, value: None }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.value) {
            (OpKind::Insert, Some(v)) => write!(f, "I {} {}", self.key, v),
            (OpKind::Insert, None) => write!(f, "I {}", self.key),
            (OpKind::Delete, _) => write!(f, "D {}", self.key),
            (OpKind::Query, _) => write!(f, "Q {}", self.key),
        }
    }
}

const FLAG_QUERIES: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationSequence {
    pub n: u64,
    pub universe: u64,
    pub value_universe: Option<u64>,
    pub seed: u64,
    pub include_queries: bool,
    pub ops: Vec<Operation>,
    /// Index into `ops` of the first operation of each meta-operation.
    pub meta_boundaries: Vec<usize>,
}

impl OperationSequence {
    /// Number of leading inserts that form the initial key set.
    pub fn init_len(&self) -> usize {
        self.meta_boundaries.first().copied().unwrap_or(self.ops.len())
    }

    pub fn initial_ops(&self) -> &[Operation] {
        &self.ops[..self.init_len()]
    }

    pub fn meta_count(&self) -> usize {
        self.meta_boundaries.len()
    }

    pub fn meta_op(&self, i: usize) -> &[Operation] {
        let start = self.meta_boundaries[i];
        let end = self.meta_boundaries.get(i + 1).copied().unwrap_or(self.ops.len());
        &self.ops[start..end]
    }

    /// Checks the full structural contract of a generated stream.
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::Invalid(m));
        let n = self.n as usize;
        if self.init_len() != n {
            return bad(format!("expected {n} initial inserts, found {}", self.init_len()));
        }
        let mut initial = HashSet::with_capacity(n);
        let mut live = HashSet::with_capacity(2 * n);
        for op in self.initial_ops() {
            if op.kind != OpKind::Insert || op.key >= self.universe || !initial.insert(op.key) {
                return bad(format!("bad initial op {op}"));
            }
            live.insert(op.key);
        }
        if self.meta_count() != n {
            return bad(format!("expected {n} meta-operations, found {}", self.meta_count()));
        }
        let mut deleted = HashSet::with_capacity(n);
        let mut fresh = HashSet::with_capacity(n);
        for i in 0..n {
            let meta = self.meta_op(i);
            let expect = if self.include_queries { 3 } else { 2 };
            if meta.len() != expect {
                return bad(format!("meta-operation {i} has {} ops", meta.len()));
            }
            let (del, ins) = (meta[expect - 2], meta[expect - 1]);
            if self.include_queries && (meta[0].kind != OpKind::Query || meta[0].key != del.key) {
                return bad(format!("meta-operation {i} does not query its deleted key"));
            }
            if del.kind != OpKind::Delete || !initial.contains(&del.key) || !deleted.insert(del.key) {
                return bad(format!("meta-operation {i} deletes {} illegally", del.key));
            }
            live.remove(&del.key);
            if ins.kind != OpKind::Insert || ins.key >= self.universe || initial.contains(&ins.key) || !live.insert(ins.key) {
                return bad(format!("meta-operation {i} inserts {} illegally", ins.key));
            }
            fresh.insert(ins.key);
            if live.len() != n {
                return bad(format!("live set has {} keys after meta-operation {i}", live.len()));
            }
        }
        for op in &self.ops {
            let has_value = op.value.is_some();
            let wants_value = op.kind == OpKind::Insert && self.value_universe.is_some();
            if has_value != wants_value {
                return bad(format!("value presence mismatch at {op}"));
            }
            if let (Some(v), Some(vu)) = (op.value, self.value_universe) {
                if v >= vu {
                    return bad(format!("value {v} outside [0, {vu})"));
                }
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let flags = if self.include_queries { FLAG_QUERIES } else { 0 };
        writeln!(out, "{} {} {} {} {}", self.n, self.universe, self.value_universe.unwrap_or(0), self.seed, flags)?;
        for op in &self.ops {
            writeln!(out, "{op}")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, WorkloadError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or(WorkloadError::Parse { line: 1, msg: "missing header".into() })??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(WorkloadError::Parse { line: 1, msg: "header must be `n U V seed flags`".into() });
        }
        let num = |i: usize, name: &str| {
            fields[i]
                .parse::<u64>()
                .map_err(|_| WorkloadError::Parse { line: 1, msg: format!("bad {name} {:?}", fields[i]) })
        };
        let n = num(0, "n")?;
        let universe = num(1, "U")?;
        let v = num(2, "V")?;
        let seed = num(3, "seed")?;
        let flags = num(4, "flags")?;
        let include_queries = flags & FLAG_QUERIES != 0;
        let value_universe = (v != 0).then_some(v);

        let mut ops = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            ops.push(parse_op(&line).map_err(|msg| WorkloadError::Parse { line: line_no, msg })?);
        }
        let meta_boundaries = meta_boundaries(&ops, n as usize, include_queries);
        Ok(Self { n, universe, value_universe, seed, include_queries, ops, meta_boundaries })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WorkloadError> {
        Self::read_from(bytes)
    }
}

fn parse_op(line: &str) -> Result<Operation, String> {
    let mut parts = line.split_whitespace();
    let tag = parts.next().ok_or("empty line")?;
    let key: u64 = parts
        .next()
        .ok_or_else(|| format!("{tag} needs a key"))?
        .parse()
        .map_err(|_| "key is not an integer".to_string())?;
    let op = match tag {
        "I" => {
            let value = match parts.next() {
                Some(v) => Some(v.parse::<u64>().map_err(|_| "value is not an integer".to_string())?),
                None => None,
            };
            Operation::insert(key, value)
        }
        "D" => Operation::delete(key),
        "Q" => Operation::query(key),
        other => return Err(format!("unknown op {other:?}")),
    };
    if parts.next().is_some() {
        return Err("trailing fields".into());
    }
    Ok(op)
}

fn meta_boundaries(ops: &[Operation], n: usize, include_queries: bool) -> Vec<usize> {
    let init = ops.iter().take(n).take_while(|op| op.kind == OpKind::Insert).count();
    let opener = if include_queries { OpKind::Query } else { OpKind::Delete };
    (init..ops.len()).filter(|&i| ops[i].kind == opener).collect()
}

/// Generates the workload deterministically from `seed`.
///
/// Draw order: the initial set by partial Fisher-Yates, then values for the
/// initial inserts, then per meta-operation the deleted index, the fresh key
/// (with rejections) and its value.
pub fn generate(
    n: u64,
    universe: u64,
    seed: u64,
    include_queries: bool,
    value_universe: Option<u64>,
) -> Result<OperationSequence, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::EmptyKeySet);
    }
    if universe / 3 < n {
        return Err(WorkloadError::UniverseTooSmall { n, universe });
    }
    if value_universe == Some(0) {
        return Err(WorkloadError::EmptyValueUniverse);
    }
    let mut rng = SplitMix64::new(seed);

    let mut swapped: HashMap<u64, u64> = HashMap::with_capacity(2 * n as usize);
    let mut initial = Vec::with_capacity(n as usize);
    for i in 0..n {
        let j = i + rng.below(universe - i);
        let at_i = *swapped.get(&i).unwrap_or(&i);
        let at_j = *swapped.get(&j).unwrap_or(&j);
        swapped.insert(j, at_i);
        swapped.insert(i, at_j);
        initial.push(at_j);
    }
    drop(swapped);

    let per_meta = if include_queries { 3 } else { 2 };
    let mut ops = Vec::with_capacity(n as usize * (1 + per_meta));
    for &k in &initial {
        let value = value_universe.map(|vu| rng.below(vu));
        ops.push(Operation::insert(k, value));
    }

    let mut excluded: HashSet<u64> = initial.iter().copied().collect();
    let mut remaining = initial;
    let mut meta_boundaries = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let idx = rng.below(remaining.len() as u64) as usize;
        let d = remaining.swap_remove(idx);
        let a = loop {
            let candidate = rng.below(universe);
            if !excluded.contains(&candidate) {
                break candidate;
            }
        };
        excluded.insert(a);
        let value = value_universe.map(|vu| rng.below(vu));

        meta_boundaries.push(ops.len());
        if include_queries {
            ops.push(Operation::query(d));
        }
        ops.push(Operation::delete(d));
        ops.push(Operation::insert(a, value));
    }

    Ok(OperationSequence { n, universe, value_universe, seed, include_queries, ops, meta_boundaries })
}
