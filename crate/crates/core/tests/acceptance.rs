//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any
//! criterion fails.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use lazyslot::bloomier::BloomierEncoding;
use lazyslot::dictionary::Dictionary;
use lazyslot::harness::{self, Budget, DictKind, RunConfig};
use lazyslot::kv_reduction::KvReductionDict;
use lazyslot::lazysort::{Checkpoint, LazySortDict, CHECKPOINT_HEADER_BITS};
use lazyslot::mathkit;
use lazyslot::transfer_tree::{self, TreeSpec};
use lazyslot::workload::{self, OpKind, SplitMix64};
use lazyslot::xor_demo;

/// Slack factor for the amortized-move bounds `C (k + 2)` and
/// `C log* n`. Calibrated once from the n = 2^16 trade-off run (worst
/// ratio 17.80 / 5 = 3.56 at k = 3) and frozen.
const C: f64 = 4.0;

const ORACLE_RUNTIME_LIMIT: Duration = Duration::from_secs(60);
const LOG_STAR_RUNTIME_LIMIT: Duration = Duration::from_secs(300);
const BLOOMIER_MAX_BITS_PER_KEY: f64 = 4.0;
const COLLISION_MEAN_RANGE: (f64, f64) = (0.2, 5.0);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let n = 4096u64;
    let mut runs = 0;
    for seed in 1..=3 {
        let seq = workload::generate(n, n * n, seed, true, None).unwrap();
        for kind in DictKind::ALL {
            let cfg = RunConfig { verify: true, ..RunConfig::new(kind) };
            if let Err(e) = harness::run(&seq, &cfg, None) {
                return outcome(false, format!("{kind} seed {seed}: {e}"));
            }
            runs += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(elapsed < ORACLE_RUNTIME_LIMIT, format!("{runs} verified runs, 0 mismatches, {:.1} s", elapsed.as_secs_f64()))
}

fn budget_safety() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for n in [256u64, 4096] {
        let seq = workload::generate(n, n * n, 7, true, None).unwrap();
        let cfg = RunConfig { budget: Budget::PerKey(8), ..RunConfig::new(DictKind::Lazysort) };
        let r = harness::run(&seq, &cfg, None).unwrap();
        pass &= r.budget_violations == 0;
        details.push(format!("n={n}: high water {} / {} bits, {} violations", r.aux_high_water, 8 * n, r.budget_violations));
    }
    outcome(pass, details.join("; "))
}

fn amortized_lazysort(n: u64, budget: Budget, seed: u64) -> f64 {
    let seq = workload::generate(n, n * n, seed, true, None).unwrap();
    let cfg = RunConfig { budget, ..RunConfig::new(DictKind::Lazysort) };
    harness::run(&seq, &cfg, None).unwrap().amortized_moves
}

fn tradeoff_trend() -> Outcome {
    let n = 1u64 << 16;
    let moves: Vec<f64> = (1..=3).map(|k| amortized_lazysort(n, Budget::WastedBitsK(k), 1)).collect();
    let finite = moves.iter().all(|m| m.is_finite());
    let monotone = moves.windows(2).all(|w| w[0] <= w[1]);
    let bounded = moves.iter().zip(1..).all(|(&m, k)| m <= C * (k as f64 + 2.0));
    let shown: Vec<String> = moves.iter().zip(1..).map(|(m, k)| format!("k={k}: {m:.3} (bound {})", C * (k as f64 + 2.0))).collect();
    outcome(finite && monotone && bounded, shown.join(", "))
}

fn log_star_scaling() -> Outcome {
    let started = Instant::now();
    let mut pass = true;
    let mut shown = Vec::new();
    for e in [12u32, 16, 20] {
        let n = 1u64 << e;
        let m = amortized_lazysort(n, Budget::PerKey(8), 1);
        let bound = C * mathkit::log_star(n) as f64;
        pass &= m <= bound;
        shown.push(format!("n=2^{e}: {m:.3} (bound {bound})"));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < LOG_STAR_RUNTIME_LIMIT;
    outcome(pass, format!("{}, {:.1} s", shown.join(", "), elapsed.as_secs_f64()))
}

fn random_tree(rng: &mut SplitMix64) -> TreeSpec {
    loop {
        let spec = match rng.below(3) {
            0 => TreeSpec::uniform(1 << (1 + rng.below(10)), 2),
            1 => TreeSpec::uniform(3u64.pow(1 + rng.below(6) as u32), 3),
            _ => {
                let n = 2 + rng.below(5000);
                let k = 1 + rng.below(mathkit::log_star(n) as u64) as u32;
                TreeSpec::build(n, k, [0.5, 1.0, 2.0][rng.below(3) as usize])
            }
        };
        if let Ok(spec) = spec {
            return spec;
        }
    }
}

fn accounting_conservation() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    for trial in 0..1000 {
        let spec = random_tree(&mut rng);
        let len = rng.below(400) as usize;
        let addresses = 1 + rng.below(50);
        let touches: Vec<(u64, u64)> = (0..len).map(|_| (rng.below(spec.n_leaves), rng.below(addresses))).collect();
        let acc = transfer_tree::account(&spec, &touches).unwrap();
        let deduped: HashSet<(u64, u64)> = touches.iter().copied().collect();
        let distinct: HashSet<u64> = touches.iter().map(|t| t.1).collect();
        let total_cost: u64 = acc.cost.iter().flatten().sum();
        if total_cost != (deduped.len() - distinct.len()) as u64 {
            return outcome(false, format!("trace {trial}: cost {total_cost} != {} - {}", deduped.len(), distinct.len()));
        }
        if acc.probe.iter().any(|level| level.iter().sum::<u64>() != len as u64) {
            return outcome(false, format!("trace {trial}: per-level probe sums differ"));
        }
    }
    outcome(true, "1000 traces, both identities exact")
}

/// Explicit node tree with parent links; the LCA is found by walking up.
struct NodeTree {
    parent: HashMap<(usize, u64), (usize, u64)>,
    height: usize,
}

impl NodeTree {
    fn new(spec: &TreeSpec) -> Self {
        let mut parent = HashMap::new();
        for level in 0..spec.height() {
            for i in 0..spec.nodes_at(level) {
                let first_leaf = i * spec.widths[level];
                let mut p = 0;
                while (p + 1) * spec.widths[level + 1] <= first_leaf {
                    p += 1;
                }
                parent.insert((level, i), (level + 1, p));
            }
        }
        Self { parent, height: spec.height() }
    }

    fn lca(&self, t1: u64, t2: u64) -> (usize, u64) {
        let mut ancestors = HashSet::new();
        let mut u = (0, t1);
        ancestors.insert(u);
        while u.0 < self.height {
            u = self.parent[&u];
            ancestors.insert(u);
        }
        let mut v = (0, t2);
        while !ancestors.contains(&v) {
            v = self.parent[&v];
        }
        v
    }

    fn costs(&self, spec: &TreeSpec, touches: &[(u64, u64)]) -> Vec<Vec<u64>> {
        let mut by_address: HashMap<u64, Vec<u64>> = HashMap::new();
        for &(t, a) in touches {
            by_address.entry(a).or_default().push(t);
        }
        let mut cost: Vec<Vec<u64>> = (1..=spec.height()).map(|l| vec![0; spec.nodes_at(l) as usize]).collect();
        for times in by_address.values_mut() {
            times.sort_unstable();
            times.dedup();
            for w in times.windows(2) {
                let (level, idx) = self.lca(w[0], w[1]);
                cost[level - 1][idx as usize] += 1;
            }
        }
        cost
    }
}

fn small_trees() -> Vec<TreeSpec> {
    let mut trees = Vec::new();
    for (n, b) in [(2, 2), (4, 2), (8, 2), (16, 2), (32, 2), (64, 2), (16, 4), (64, 4), (64, 8), (9, 3), (27, 3), (5, 5), (25, 5)] {
        trees.push(TreeSpec::uniform(n, b).unwrap());
    }
    for n in 2..=64 {
        for k in 1..=mathkit::log_star(n) {
            for c in [0.5, 1.0, 2.0] {
                if let Ok(spec) = TreeSpec::build(n, k, c) {
                    if !trees.contains(&spec) {
                        trees.push(spec);
                    }
                }
            }
        }
    }
    trees
}

fn lca_oracle() -> Outcome {
    let mut checked = 0u64;
    let mut rng = SplitMix64::new(64);
    for spec in small_trees() {
        let tree = NodeTree::new(&spec);
        let n = spec.n_leaves;
        let mut check = |touches: &[(u64, u64)]| -> bool {
            checked += 1;
            transfer_tree::assign_costs(&spec, touches).unwrap() == tree.costs(&spec, touches)
        };
        for t1 in 0..n {
            for t2 in t1 + 1..n {
                if !check(&[(t1, 0), (t2, 0)]) {
                    return outcome(false, format!("{n} leaves {:?}: pair ({t1}, {t2})", spec.branchings));
                }
                // two more addresses at random times ride along
                let extra = [(rng.below(n), 1), (rng.below(n), 1), (rng.below(n), 2), (rng.below(n), 2), (rng.below(n), 2)];
                let mut touches = vec![(t1, 0), (t2, 0)];
                touches.extend(extra);
                if !check(&touches) {
                    return outcome(false, format!("{n} leaves: pair ({t1}, {t2}) with {extra:?}"));
                }
            }
        }
    }
    outcome(true, format!("{checked} traces over {} trees, 0 mismatches", small_trees().len()))
}

fn bloomier_separation() -> Outcome {
    let mut rng = SplitMix64::new(99);
    let mut total_bits = 0u64;
    let mut fallbacks = 0;
    for seed in 0..10_000u64 {
        let mut keys = HashSet::new();
        while keys.len() < 512 {
            keys.insert(rng.below(1 << 40));
        }
        let keys: Vec<u64> = keys.into_iter().collect();
        let (a, b) = keys.split_at(256);
        let enc = BloomierEncoding::build(a, b, 1 << 40, seed).unwrap();
        if !a.iter().all(|&x| enc.query(x)) || b.iter().any(|&x| enc.query(x)) {
            return outcome(false, format!("separation broken for seed {seed}"));
        }
        fallbacks += usize::from(enc.is_fallback());
        total_bits += enc.size_bits();
    }
    let mean = total_bits as f64 / 10_000.0 / 512.0;
    outcome(mean <= BLOOMIER_MAX_BITS_PER_KEY, format!("10000 pairs separated, mean {mean:.3} bits/key, {fallbacks} fallbacks"))
}

fn collision_statistics() -> Outcome {
    let n = 1u64 << 12;
    let key_universe = n * n;
    let v = 1u64 << 8;
    let mut total = 0u64;
    for seed in 0..100 {
        let seq = workload::generate(n, key_universe * v, seed, false, None).unwrap();
        let mut d = KvReductionDict::new(n as usize, key_universe, v, 8 * n).unwrap();
        let initial: Vec<u64> = seq.initial_ops().iter().map(|op| op.key).collect();
        d.bulk_init(&initial).unwrap();
        for op in &seq.ops[seq.init_len()..] {
            match op.kind {
                OpKind::Insert => d.insert(op.key).unwrap(),
                OpKind::Delete => d.delete(op.key).unwrap(),
                OpKind::Query => {}
            }
        }
        total += d.collisions_routed();
    }
    let mean = total as f64 / 100.0;
    let (lo, hi) = COLLISION_MEAN_RANGE;
    outcome((lo..=hi).contains(&mean), format!("mean collisions {mean:.2} over 100 seeds (n^2/U = 1)"))
}

fn xor_demo_paths() -> Outcome {
    let r = xor_demo::run_demo(1000, 3500, 4200, 1100, 500, 2500).unwrap();
    let pass = r.probes_a == ["C1", "C2"] && r.probes_b == ["C2", "C3"] && r.c2_identical && r.cells_a[1] == 4200;
    outcome(pass, format!("S_A = {:?}, S_B = {:?}, C2 = {} / {}", r.probes_a, r.probes_b, r.cells_a[1], r.cells_b[1]))
}

fn ledger_sufficiency() -> Outcome {
    let mut rng = SplitMix64::new(512);
    let mut batches_seen = 0usize;
    for trial in 0..100 {
        let n = 16 + rng.below(497) as usize;
        let universe = (n * n) as u64;
        let budget = n as u64 * (3 + rng.below(14));
        let Ok(mut d) = LazySortDict::new(n, universe, budget) else { continue };
        let mut present: Vec<u64> = Vec::new();
        let mut set = HashSet::new();
        let steps = rng.below(4 * n as u64);
        for _ in 0..steps {
            if present.len() < n && (present.is_empty() || rng.below(2) == 0) {
                let k = rng.below(universe);
                if set.insert(k) {
                    d.insert(k).unwrap();
                    present.push(k);
                }
            } else {
                let k = present.swap_remove(rng.below(present.len() as u64) as usize);
                set.remove(&k);
                d.delete(k).unwrap();
            }
        }
        batches_seen += d.batches().len();
        let (bytes, bits) = d.checkpoint().encode();
        if bits != CHECKPOINT_HEADER_BITS + d.checkpoint().base_storage_bits() + d.aux_bits() {
            return outcome(false, format!("dictionary {trial}: checkpoint size disagrees with the ledger"));
        }
        let decoded = match Checkpoint::decode(&bytes) {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("dictionary {trial}: {e}")),
        };
        let map = decoded.reconstruct(|s| d.slots().get(s)).unwrap();
        if map != d.slots().contents() {
            return outcome(false, format!("dictionary {trial} (n={n}): reconstructed map differs"));
        }
    }
    outcome(true, format!("100 dictionaries reconstructed exactly ({batches_seen} batches decoded)"))
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 budget safety", budget_safety),
        ("3 trade-off trend", tradeoff_trend),
        ("4 log* scaling", log_star_scaling),
        ("5 accounting conservation", accounting_conservation),
        ("6 LCA oracle", lca_oracle),
        ("7 bloomier separation", bloomier_separation),
        ("8 collision statistics", collision_statistics),
        ("9 xor demo", xor_demo_paths),
        ("10 ledger sufficiency", ledger_sufficiency),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
