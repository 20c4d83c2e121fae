//! Drives any [`Dictionary`] through an operation stream under
//! instrumentation, and sweeps the budget/moves trade-off.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{EagerSortedDict, LinearProbeDict};
use crate::dictionary::{DictError, Dictionary};
use crate::kv_reduction::KvReductionDict;
use crate::lazysort::LazySortDict;
use crate::mathkit;
use crate::slot_model::SlotTouch;
use crate::workload::{self, OpKind, OperationSequence, WorkloadError};

/// Trace entries buffered before they are handed to the sink.
const TRACE_CHUNK: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown dictionary '{0}' (expected lazysort, linear-probe, eager or kv-reduction)")]
    UnknownDict(String),
    #[error("operation {op_index}: query {key} returned {got}, oracle says {expected}")]
    Mismatch { op_index: usize, key: u64, expected: bool, got: bool },
    #[error("operation {op_index}: {source}")]
    Op { op_index: usize, source: DictError },
    #[error(transparent)]
    Dict(#[from] DictError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("k = {k} is outside 1..={max} for n = {n}")]
    BadK { n: u64, k: u32, max: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictKind {
    Lazysort,
    LinearProbe,
    Eager,
    KvReduction,
}

impl DictKind {
    pub const ALL: [DictKind; 4] = [DictKind::Lazysort, DictKind::LinearProbe, DictKind::Eager, DictKind::KvReduction];

    pub fn name(self) -> &'static str {
        match self {
            DictKind::Lazysort => "lazysort",
            DictKind::LinearProbe => "linear-probe",
            DictKind::Eager => "eager",
            DictKind::KvReduction => "kv-reduction",
        }
    }
}

impl fmt::Display for DictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DictKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| HarnessError::UnknownDict(s.to_string()))
    }
}

/// How a budget is chosen when none is given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Bits(u64),
    /// `n * ceil(log^(k) n)` bits.
    WastedBitsK(u32),
    /// `per_key * n` bits.
    PerKey(u64),
}

impl Default for Budget {
    fn default() -> Self {
        Budget::PerKey(8)
    }
}

impl Budget {
    pub fn resolve(self, n: u64) -> Result<u64, HarnessError> {
        match self {
            Budget::Bits(b) => Ok(b),
            Budget::PerKey(r) => Ok(r * n),
            Budget::WastedBitsK(k) => {
                let max = mathkit::log_star(n);
                if k == 0 || k > max {
                    return Err(HarnessError::BadK { n, k, max });
                }
                Ok(n * mathkit::iter_log(n, k).expect("k <= log* n").ceil() as u64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub kind: DictKind,
    pub budget: Budget,
    /// Split factor `V` for the key-value reduction; the stream universe
    /// must be a multiple of it.
    pub split_v: u64,
    pub hash_seed: u64,
    pub verify: bool,
}

impl RunConfig {
    pub fn new(kind: DictKind) -> Self {
        Self { kind, budget: Budget::default(), split_v: 16, hash_seed: 0x5eed, verify: false }
    }
}

pub fn build_dict(cfg: &RunConfig, n: u64, universe: u64) -> Result<Box<dyn Dictionary + Send>, HarnessError> {
    let size = n as usize;
    Ok(match cfg.kind {
        DictKind::Lazysort => Box::new(LazySortDict::new(size, universe, cfg.budget.resolve(n)?)?),
        DictKind::LinearProbe => Box::new(LinearProbeDict::new(size, universe, cfg.hash_seed)?),
        DictKind::Eager => Box::new(EagerSortedDict::new(size, universe)?),
        DictKind::KvReduction => {
            if cfg.split_v == 0 || !universe.is_multiple_of(cfg.split_v) {
                return Err(DictError::BadParameters(format!("universe {universe} is not a multiple of V = {}", cfg.split_v)).into());
            }
            Box::new(KvReductionDict::new(size, universe / cfg.split_v, cfg.split_v, cfg.budget.resolve(n)?)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub dict: String,
    pub n: u64,
    pub universe: u64,
    pub seed: u64,
    pub budget_bits: Option<u64>,
    pub meta_ops: u64,
    /// Moves during meta-operations only.
    pub total_moves: u64,
    /// Moves spent loading the initial key set.
    pub init_moves: u64,
    pub amortized_moves: f64,
    /// Slot-trace entries during meta-operations.
    pub total_probes: u64,
    pub aux_high_water: u64,
    pub budget_violations: u64,
    pub rebuilds: u64,
    pub levels: usize,
    pub queries: u64,
    pub wall_ms: f64,
}

pub const REPORT_CSV_HEADER: &str = "dict,n,universe,seed,budget_bits,meta_ops,total_moves,init_moves,amortized_moves,total_probes,aux_high_water,budget_violations,rebuilds,levels,queries,wall_ms";

impl RunReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{},{},{},{},{},{},{:.3}",
            self.dict,
            self.n,
            self.universe,
            self.seed,
            self.budget_bits.map(|b| b.to_string()).unwrap_or_default(),
            self.meta_ops,
            self.total_moves,
            self.init_moves,
            self.amortized_moves,
            self.total_probes,
            self.aux_high_water,
            self.budget_violations,
            self.rebuilds,
            self.levels,
            self.queries,
            self.wall_ms
        )
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub type TraceSink<'a> = &'a mut dyn FnMut(Vec<SlotTouch>) -> io::Result<()>;

/// Loads the initial keys with `bulk_init`, then replays every
/// meta-operation with the clock set to its index. The budget is checked
/// after every operation. With `verify`, queries are compared against a
/// reference set and the first disagreement aborts the run.
pub fn run(seq: &OperationSequence, cfg: &RunConfig, mut sink: Option<TraceSink<'_>>) -> Result<RunReport, HarnessError> {
    let started = Instant::now();
    let mut dict = build_dict(cfg, seq.n, seq.universe)?;
    let budget = dict.budget_bits();
    let mut high_water = 0u64;
    let mut violations = 0u64;
    let mut check_budget = |dict: &dyn Dictionary| {
        let aux = dict.stats().aux_bits;
        high_water = high_water.max(aux);
        if budget.is_some_and(|b| aux > b) {
            violations += 1;
        }
    };

    let initial: Vec<u64> = seq.initial_ops().iter().map(|op| op.key).collect();
    dict.bulk_init(&initial)?;
    check_budget(dict.as_ref());
    let init_moves = dict.stats().move_count;
    dict.slots_mut().trace_mut().drain();

    let mut oracle: HashSet<u64> = if cfg.verify { initial.iter().copied().collect() } else { HashSet::new() };
    let mut queries = 0u64;
    let mut probes = 0u64;
    for i in 0..seq.meta_count() {
        dict.set_clock(i as u64);
        let base = seq.meta_boundaries[i];
        for (j, op) in seq.meta_op(i).iter().enumerate() {
            let op_index = base + j;
            let at = |source| HarnessError::Op { op_index, source };
            match op.kind {
                OpKind::Insert => {
                    dict.insert(op.key).map_err(at)?;
                    if cfg.verify {
                        oracle.insert(op.key);
                    }
                }
                OpKind::Delete => {
                    dict.delete(op.key).map_err(at)?;
                    if cfg.verify {
                        oracle.remove(&op.key);
                    }
                }
                OpKind::Query => {
                    queries += 1;
                    let got = dict.query(op.key).found;
                    if cfg.verify && got != oracle.contains(&op.key) {
                        return Err(HarnessError::Mismatch { op_index, key: op.key, expected: !got, got });
                    }
                }
            }
            check_budget(dict.as_ref());
        }
        if dict.slots().trace().len() >= TRACE_CHUNK {
            let chunk = dict.slots_mut().trace_mut().drain();
            probes += chunk.len() as u64;
            if let Some(sink) = sink.as_mut() {
                sink(chunk)?;
            }
        }
    }
    let rest = dict.slots_mut().trace_mut().drain();
    probes += rest.len() as u64;
    if let Some(sink) = sink.as_mut() {
        sink(rest)?;
    }

    let stats = dict.stats();
    let meta_ops = seq.meta_count() as u64;
    let total_moves = stats.move_count - init_moves;
    Ok(RunReport {
        dict: cfg.kind.name().to_string(),
        n: seq.n,
        universe: seq.universe,
        seed: seq.seed,
        budget_bits: budget,
        meta_ops,
        total_moves,
        init_moves,
        amortized_moves: if meta_ops == 0 { 0.0 } else { total_moves as f64 / meta_ops as f64 },
        total_probes: probes,
        aux_high_water: high_water,
        budget_violations: violations,
        rebuilds: stats.rebuild_count,
        levels: stats.level_counts.len().saturating_sub(1),
        queries,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: u64,
    pub k: u32,
    pub seed: u64,
    pub budget_bits: Option<u64>,
    pub amortized_moves: Option<f64>,
    pub levels: Option<usize>,
    /// `ok`, or `skipped: <reason>`.
    pub status: String,
}

pub const SWEEP_CSV_HEADER: &str = "n,k,seed,budget_bits,amortized_moves,levels,status";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            self.k,
            self.seed,
            self.budget_bits.map(|b| b.to_string()).unwrap_or_default(),
            self.amortized_moves.map(|m| format!("{m:.6}")).unwrap_or_default(),
            self.levels.map(|l| l.to_string()).unwrap_or_default(),
            self.status
        )
    }

    /// Whitespace-separated, `?` for missing values (gnuplot's default).
    pub fn gnuplot_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "?".into());
        format!(
            "{} {} {} {} {} {}",
            self.n,
            self.k,
            self.seed,
            opt(self.budget_bits.map(|b| b.to_string())),
            opt(self.amortized_moves.map(|m| format!("{m:.6}"))),
            opt(self.levels.map(|l| l.to_string()))
        )
    }
}

/// One lazysort run on a generated stream with `U = n^2` and budget
/// `n * ceil(log^(k) n)`.
pub fn sweep_cell(n: u64, k: u32, seed: u64, include_queries: bool) -> SweepRow {
    let skipped = |budget, why: String| SweepRow {
        n,
        k,
        seed,
        budget_bits: budget,
        amortized_moves: None,
        levels: None,
        status: format!("skipped: {why}"),
    };
    let budget = match Budget::WastedBitsK(k).resolve(n) {
        Ok(b) => b,
        Err(e) => return skipped(None, e.to_string()),
    };
    let Some(universe) = n.checked_mul(n) else { return skipped(Some(budget), "n^2 overflows".into()) };
    let seq = match workload::generate(n, universe, seed, include_queries, None) {
        Ok(s) => s,
        Err(e) => return skipped(Some(budget), e.to_string()),
    };
    let cfg = RunConfig { budget: Budget::Bits(budget), ..RunConfig::new(DictKind::Lazysort) };
    match run(&seq, &cfg, None) {
        Ok(r) => SweepRow {
            n,
            k,
            seed,
            budget_bits: Some(budget),
            amortized_moves: Some(r.amortized_moves),
            levels: Some(r.levels),
            status: "ok".into(),
        },
        Err(e) => skipped(Some(budget), e.to_string()),
    }
}

/// Full cross product, run in parallel; rows come back in `(n, k, seed)`
/// order.
pub fn sweep(ns: &[u64], ks: &[u32], seeds: &[u64], include_queries: bool) -> Vec<SweepRow> {
    let cells: Vec<(u64, u32, u64)> =
        ns.iter().flat_map(|&n| ks.iter().flat_map(move |&k| seeds.iter().map(move |&s| (n, k, s)))).collect();
    cells.into_par_iter().map(|(n, k, s)| sweep_cell(n, k, s, include_queries)).collect()
}

pub fn write_sweep<W: Write>(out: &mut W, rows: &[SweepRow], gnuplot: bool) -> io::Result<()> {
    if gnuplot {
        writeln!(out, "# n k seed budget_bits amortized_moves levels")?;
        for r in rows {
            writeln!(out, "{}", r.gnuplot_row())?;
        }
    } else {
        writeln!(out, "{SWEEP_CSV_HEADER}")?;
        for r in rows {
            writeln!(out, "{}", r.csv_row())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dict_names_roundtrip() {
        for kind in DictKind::ALL {
            assert_eq!(kind.name().parse::<DictKind>().unwrap(), kind);
        }
        assert!(matches!("btree".parse::<DictKind>(), Err(HarnessError::UnknownDict(_))));
    }

    #[test]
    fn budgets() {
        assert_eq!(Budget::WastedBitsK(2).resolve(1 << 16).unwrap(), 4 << 16);
        assert_eq!(Budget::WastedBitsK(1).resolve(1 << 16).unwrap(), 16 << 16);
        assert_eq!(Budget::PerKey(8).resolve(10).unwrap(), 80);
        assert!(Budget::WastedBitsK(5).resolve(1 << 16).is_err());
    }

    #[test]
    fn every_dict_verifies_a_small_run() {
        let seq = workload::generate(128, 128 * 128, 3, true, None).unwrap();
        for kind in DictKind::ALL {
            let cfg = RunConfig { verify: true, ..RunConfig::new(kind) };
            let r = run(&seq, &cfg, None).unwrap();
            assert_eq!(r.meta_ops, 128);
            assert_eq!(r.queries, 128);
            assert_eq!(r.amortized_moves, r.total_moves as f64 / 128.0);
            assert_eq!(r.budget_violations, 0, "{kind}");
        }
    }

    #[test]
    fn eager_reports_no_aux() {
        let seq = workload::generate(64, 4096, 1, false, None).unwrap();
        let r = run(&seq, &RunConfig::new(DictKind::Eager), None).unwrap();
        assert_eq!(r.aux_high_water, 0);
        assert_eq!(r.init_moves, 64);
    }

    #[test]
    fn sink_sees_every_trace_entry() {
        let seq = workload::generate(64, 4096, 2, true, None).unwrap();
        let mut seen = 0u64;
        let mut last_time = 0;
        let mut sink = |chunk: Vec<SlotTouch>| {
            for t in &chunk {
                assert!(t.time >= last_time && t.time < 64);
                last_time = t.time;
            }
            seen += chunk.len() as u64;
            Ok(())
        };
        let r = run(&seq, &RunConfig::new(DictKind::Lazysort), Some(&mut sink)).unwrap();
        assert_eq!(seen, r.total_probes);
    }

    #[test]
    fn infeasible_sweep_cell_is_skipped() {
        let rows = sweep(&[256], &[1, 9], &[0], false);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[1].status.starts_with("skipped"));
        let mut out = Vec::new();
        write_sweep(&mut out, &rows, false).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(SWEEP_CSV_HEADER));
    }
}
