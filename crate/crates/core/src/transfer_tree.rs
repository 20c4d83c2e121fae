//! Information-transfer tree over meta-operations and the two per-node
//! accounting quantities: `cost` (consecutive touches of one address
//! charged to their lowest common ancestor) and `probe` (touches inside the
//! node's time interval).
//!
//! Levels run from 0 (single leaves, width 1) to `h` (the root, width `n`).

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::mathkit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("need at least 2 leaves, got {0}")]
    TooFewLeaves(u64),
    #[error("k = {k} must lie in 1..={log_star}")]
    BadK { k: u32, log_star: u32 },
    #[error("c must be positive and finite, got {0}")]
    BadC(f64),
    #[error("parameters give a tree of height 0 (n = {n}, k = {k}, c = {c})")]
    ZeroHeight { n: u64, k: u32, c: f64 },
    #[error("no level satisfies log^(l) n <= c log^(k) n (n = {n}, k = {k}, c = {c})")]
    NoRootLevel { n: u64, k: u32, c: f64 },
    #[error("level {level} has branching {branching}; widths must strictly grow")]
    NonMonotone { level: usize, branching: u64 },
    #[error("{n} leaves is not a power of branching {branching}")]
    NotAPower { n: u64, branching: u64 },
    #[error("touch at time {time} is outside [0, {n})")]
    TimeOutOfRange { time: u64, n: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSpec {
    pub n_leaves: u64,
    /// `widths[l]` leaves per level-`l` node; `widths[0] = 1`, `widths[h] = n`.
    pub widths: Vec<u64>,
    /// `branchings[l - 1] = widths[l] / widths[l - 1]`.
    pub branchings: Vec<u64>,
    pub k: u32,
    pub c: f64,
    /// Set when the formula collapsed and a binary tree was used instead.
    pub fallback: bool,
}

fn largest_divisor_at_most(m: u64, bound: u64) -> u64 {
    let bound = bound.clamp(1, m);
    (1..=bound).rev().find(|d| m.is_multiple_of(*d)).unwrap_or(1)
}

impl TreeSpec {
    /// Widths `m_l = c n log^(k) n / log^(l) n`, each floored to a divisor
    /// of the level above, with `m_h = n` at the first level where
    /// `log^(h) n <= c log^(k) n`.
    ///
    /// If some level ends up with branching 1, a power-of-two `n` falls back
    /// to a uniform binary tree; otherwise the failing level is reported.
    pub fn build(n: u64, k: u32, c: f64) -> Result<Self, TreeError> {
        if n < 2 {
            return Err(TreeError::TooFewLeaves(n));
        }
        let log_star = mathkit::log_star(n);
        if k == 0 || k > log_star {
            return Err(TreeError::BadK { k, log_star });
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(TreeError::BadC(c));
        }
        let table = mathkit::IterLogTable::new(n).expect("n >= 2");
        let target = c * table.values[k as usize];
        let h = table
            .values
            .iter()
            .position(|&v| v <= target)
            .ok_or(TreeError::NoRootLevel { n, k, c })?;
        if h == 0 {
            return Err(TreeError::ZeroHeight { n, k, c });
        }
        let mut widths = vec![0u64; h + 1];
        widths[h] = n;
        for l in (1..h).rev() {
            let raw = (target * n as f64 / table.values[l]).floor() as u64;
            widths[l] = largest_divisor_at_most(widths[l + 1], raw);
        }
        widths[0] = 1;
        let branchings: Vec<u64> = widths.windows(2).map(|w| w[1] / w[0]).collect();
        if let Some(level) = branchings.iter().position(|&b| b < 2) {
            if n.is_power_of_two() {
                let mut spec = Self::uniform(n, 2)?;
                spec.k = k;
                spec.c = c;
                spec.fallback = true;
                return Ok(spec);
            }
            return Err(TreeError::NonMonotone { level: level + 1, branching: branchings[level] });
        }
        Ok(Self { n_leaves: n, widths, branchings, k, c, fallback: false })
    }

    /// Uniform tree with every branching equal to `branching`; `n` must be
    /// a power of it. Small branchings here are desk-scale stand-ins, not
    /// the constant used in the asymptotic argument.
    pub fn uniform(n: u64, branching: u64) -> Result<Self, TreeError> {
        if n < 2 {
            return Err(TreeError::TooFewLeaves(n));
        }
        if branching < 2 {
            return Err(TreeError::NonMonotone { level: 1, branching });
        }
        let mut widths = vec![1u64];
        while *widths.last().unwrap() < n {
            let next = widths.last().unwrap().checked_mul(branching).filter(|&w| w <= n);
            match next {
                Some(w) => widths.push(w),
                None => return Err(TreeError::NotAPower { n, branching }),
            }
        }
        let branchings = vec![branching; widths.len() - 1];
        Ok(Self { n_leaves: n, widths, branchings, k: 0, c: 0.0, fallback: false })
    }

    pub fn height(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn nodes_at(&self, level: usize) -> u64 {
        self.n_leaves / self.widths[level]
    }

    /// Level of the lowest common ancestor of two distinct leaves.
    pub fn lca_level(&self, t1: u64, t2: u64) -> usize {
        debug_assert_ne!(t1, t2);
        // the shared-ancestor predicate is monotone in the level
        let (mut lo, mut hi) = (1, self.height());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if t1 / self.widths[mid] == t2 / self.widths[mid] {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }
}

/// Per-node costs and probes for levels `1..=h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeAccounting {
    /// `cost[l - 1][i]` for node `i` of level `l`.
    pub cost: Vec<Vec<u64>>,
    pub probe: Vec<Vec<u64>>,
}

fn check_times(spec: &TreeSpec, touches: &[(u64, u64)]) -> Result<(), TreeError> {
    match touches.iter().find(|(t, _)| *t >= spec.n_leaves) {
        Some(&(time, _)) => Err(TreeError::TimeOutOfRange { time, n: spec.n_leaves }),
        None => Ok(()),
    }
}

fn zeroed(spec: &TreeSpec) -> Vec<Vec<u64>> {
    (1..=spec.height()).map(|l| vec![0; spec.nodes_at(l) as usize]).collect()
}

/// Charges each pair of consecutive touches of one address to their LCA.
/// Touches are `(time, address)`; repeats within one time are merged.
pub fn assign_costs(spec: &TreeSpec, touches: &[(u64, u64)]) -> Result<Vec<Vec<u64>>, TreeError> {
    check_times(spec, touches)?;
    let mut by_address: Vec<(u64, u64)> = touches.iter().map(|&(t, a)| (a, t)).collect();
    by_address.sort_unstable();
    by_address.dedup();
    let mut cost = zeroed(spec);
    for w in by_address.windows(2) {
        let ((a1, t1), (a2, t2)) = (w[0], w[1]);
        if a1 == a2 {
            let level = spec.lca_level(t1, t2);
            cost[level - 1][(t2 / spec.widths[level]) as usize] += 1;
        }
    }
    Ok(cost)
}

/// Counts every touch in each node's interval.
pub fn probe_per_node(spec: &TreeSpec, touches: &[(u64, u64)]) -> Result<Vec<Vec<u64>>, TreeError> {
    check_times(spec, touches)?;
    let mut probe = zeroed(spec);
    for &(t, _) in touches {
        for l in 1..=spec.height() {
            probe[l - 1][(t / spec.widths[l]) as usize] += 1;
        }
    }
    Ok(probe)
}

pub fn account(spec: &TreeSpec, touches: &[(u64, u64)]) -> Result<TreeAccounting, TreeError> {
    Ok(TreeAccounting { cost: assign_costs(spec, touches)?, probe: probe_per_node(spec, touches)? })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub sum_cost: u64,
    pub sum_probe: u64,
    pub mean_cost: f64,
}

pub fn level_summary(acc: &TreeAccounting) -> Vec<LevelRow> {
    acc.cost
        .iter()
        .zip(&acc.probe)
        .enumerate()
        .map(|(i, (cost, probe))| {
            let sum_cost: u64 = cost.iter().sum();
            LevelRow {
                level: i + 1,
                sum_cost,
                sum_probe: probe.iter().sum(),
                mean_cost: if cost.is_empty() { 0.0 } else { sum_cost as f64 / cost.len() as f64 },
            }
        })
        .collect()
}

pub fn write_nodes_csv<W: Write>(out: &mut W, acc: &TreeAccounting) -> io::Result<()> {
    writeln!(out, "level,node_index,cost,probe")?;
    for (i, (cost, probe)) in acc.cost.iter().zip(&acc.probe).enumerate() {
        for (j, (c, p)) in cost.iter().zip(probe).enumerate() {
            writeln!(out, "{},{j},{c},{p}", i + 1)?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: &mut W, rows: &[LevelRow]) -> io::Result<()> {
    writeln!(out, "level,sum_cost,sum_probe,mean_cost")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.6}", r.level, r.sum_cost, r.sum_probe, r.mean_cost)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_widths() {
        let spec = TreeSpec::build(1 << 16, 4, 1.0).unwrap();
        assert_eq!(spec.widths, vec![1, 4096, 16384, 32768, 65536]);
        assert_eq!(spec.branchings, vec![4096, 4, 2, 2]);
        assert!(!spec.fallback);
    }

    #[test]
    fn collapsed_formula_falls_back_to_binary() {
        let k = mathkit::log_star(8);
        let spec = TreeSpec::build(8, k, 1.0).unwrap();
        assert!(spec.fallback);
        assert_eq!(spec.widths, vec![1, 2, 4, 8]);
        match TreeSpec::build(13, mathkit::log_star(13), 1.0) {
            Err(TreeError::NonMonotone { level, .. }) => assert!(level >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(TreeSpec::build(1, 1, 1.0), Err(TreeError::TooFewLeaves(1))));
        assert!(matches!(TreeSpec::build(1 << 16, 0, 1.0), Err(TreeError::BadK { .. })));
        assert!(matches!(TreeSpec::build(1 << 16, 5, 1.0), Err(TreeError::BadK { .. })));
        assert!(matches!(TreeSpec::build(1 << 16, 2, 1e6), Err(TreeError::ZeroHeight { .. })));
        assert!(matches!(TreeSpec::uniform(12, 2), Err(TreeError::NotAPower { .. })));
    }

    #[test]
    fn widths_divide_upward() {
        for n in [16u64, 100, 1000, 4096, 10_000, 65_536, 1_000_000] {
            for k in 1..=mathkit::log_star(n) {
                for c in [0.5, 1.0, 2.0, 4.0] {
                    if let Ok(spec) = TreeSpec::build(n, k, c) {
                        assert_eq!(spec.widths[0], 1);
                        assert_eq!(*spec.widths.last().unwrap(), n);
                        for w in spec.widths.windows(2) {
                            assert_eq!(w[1] % w[0], 0);
                            assert!(w[1] / w[0] >= 2);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hand_lca_example() {
        let spec = TreeSpec::uniform(8, 2).unwrap();
        let cost = assign_costs(&spec, &[(0, 7), (3, 7), (4, 7)]).unwrap();
        assert_eq!(cost[1], vec![1, 0]);
        assert_eq!(cost[2], vec![1]);
        assert_eq!(cost.iter().flatten().sum::<u64>(), 2);
    }

    #[test]
    fn single_touches_cost_nothing() {
        let spec = TreeSpec::uniform(8, 2).unwrap();
        let touches: Vec<(u64, u64)> = (0..8).map(|t| (t, t)).collect();
        assert!(assign_costs(&spec, &touches).unwrap().iter().flatten().all(|&c| c == 0));
        let probe = probe_per_node(&spec, &touches).unwrap();
        assert_eq!(probe[0], vec![2, 2, 2, 2]);
    }

    #[test]
    fn same_time_repeats_merge() {
        let spec = TreeSpec::uniform(4, 2).unwrap();
        let cost = assign_costs(&spec, &[(1, 3), (1, 3), (2, 3)]).unwrap();
        assert_eq!(cost.iter().flatten().sum::<u64>(), 1);
        let probe = probe_per_node(&spec, &[(1, 3), (1, 3), (2, 3)]).unwrap();
        assert_eq!(probe[1], vec![3]);
    }

    #[test]
    fn empty_trace_and_range_errors() {
        let spec = TreeSpec::uniform(8, 2).unwrap();
        let acc = account(&spec, &[]).unwrap();
        let rows = level_summary(&acc);
        assert_eq!(rows.len(), spec.height());
        assert!(rows.iter().all(|r| r.sum_cost == 0 && r.sum_probe == 0 && r.mean_cost == 0.0));
        assert_eq!(assign_costs(&spec, &[(8, 0)]), Err(TreeError::TimeOutOfRange { time: 8, n: 8 }));
    }

    #[test]
    fn csv_layout() {
        let spec = TreeSpec::uniform(4, 2).unwrap();
        let acc = account(&spec, &[(0, 1), (3, 1)]).unwrap();
        let mut nodes = Vec::new();
        write_nodes_csv(&mut nodes, &acc).unwrap();
        assert_eq!(String::from_utf8(nodes).unwrap(), "level,node_index,cost,probe\n1,0,0,1\n1,1,0,1\n2,0,1,2\n");
        let mut summary = Vec::new();
        write_summary_csv(&mut summary, &level_summary(&acc)).unwrap();
        assert_eq!(
            String::from_utf8(summary).unwrap(),
            "level,sum_cost,sum_probe,mean_cost\n1,0,2,0.000000\n2,1,2,1.000000\n"
        );
    }
}
