//! Seeded synthetic tool library and a brute-force oracle for the search.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use hts_core::agent::ExecutorBudget;
use hts_core::backend::SimulatedBackend;
use hts_core::harness::dataset::Record;
use hts_core::hash::derive_seed;
use hts_core::metrics::MetricId;
use hts_core::path::PathExpr;
use hts_core::registry::{ToolKind, ToolRegistry, ToolSpec};
use hts_core::search::{
    evaluate_path, DatasetEvaluator, Evaluation, PathEvaluator, PolicyChoice, SearchConfig, SearchError, Searcher,
};

pub const ITEMS: usize = 20;
pub const TOOLS: [(&str, ToolKind, u64); 4] = [
    ("Calc", ToolKind::Compute, 55),
    ("Model", ToolKind::Compute, 40),
    ("Lookup", ToolKind::Retrieval, 50),
    ("Search", ToolKind::Retrieval, 35),
];

pub fn records() -> Vec<Record> {
    (0..ITEMS)
        .map(|i| Record::new(format!("r{i}"), format!("q{i}"), format!("g{i}")))
        .collect()
}

/// Each tool answers item `i` correctly with a seeded probability and
/// corrupts a fifth of its answers.
pub fn library(seed: u64) -> ToolRegistry {
    let mut r = ToolRegistry::new("task");
    for (name, kind, pct) in TOOLS {
        let table = (0..ITEMS).map(|i| {
            let roll = derive_seed(seed, &[name.as_bytes(), &i.to_le_bytes()]) % 100;
            let out = if roll < pct { format!("g{i}") } else { format!("x{i}") };
            (format!("q{i}"), out)
        });
        let backend = SimulatedBackend::new(table).with_error_rate(0.2, derive_seed(seed, &[name.as_bytes()]));
        r.register(ToolSpec::simulated(name, kind, backend)).unwrap();
    }
    r
}

pub fn cfg(seed: u64) -> SearchConfig {
    SearchConfig {
        n: 2,
        k: 2,
        m: 2,
        warmup_depth_cap: 3,
        metric: MetricId::Exact,
        seed,
        jobs: 1,
    }
}

pub fn evaluator() -> DatasetEvaluator {
    DatasetEvaluator::new(
        records(),
        MetricId::Exact,
        PolicyChoice::Greedy,
        ExecutorBudget::default(),
    )
}

pub fn brute(path: &PathExpr, registry: &ToolRegistry) -> f64 {
    evaluate_path(
        path,
        &records(),
        registry,
        &PolicyChoice::Greedy,
        ExecutorBudget::default(),
        MetricId::Exact,
        None,
    )
    .unwrap()
    .score
}

#[derive(Clone)]
struct Scored {
    path: PathExpr,
    score: f64,
    kind: ToolKind,
}

fn order(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.path.agent_count().cmp(&b.path.agent_count()))
        .then(a.path.serialize().cmp(&b.path.serialize()))
}

fn top_k(entries: &[Scored], kind: ToolKind, k: usize) -> Vec<Scored> {
    let mut v: Vec<Scored> = entries.iter().filter(|e| e.kind == kind).cloned().collect();
    v.sort_by(order);
    v.truncate(k);
    v
}

fn kind_of(path: &PathExpr) -> ToolKind {
    let base = path.first_ref().base().to_string();
    TOOLS.iter().find(|t| t.0 == base).unwrap().1
}

/// Every subset the layer defines, built without the crate's generator.
fn candidates(compute: &[Scored], retrieval: &[Scored], m: usize) -> Vec<PathExpr> {
    let mut sets: Vec<Vec<PathExpr>> = Vec::new();
    if let (Some(c0), Some(r0)) = (compute.first(), retrieval.first()) {
        for r in retrieval {
            sets.push(vec![c0.path.clone(), r.path.clone()]);
        }
        for c in compute {
            sets.push(vec![r0.path.clone(), c.path.clone()]);
        }
    }
    let union: Vec<PathExpr> = compute.iter().chain(retrieval).map(|s| s.path.clone()).collect();
    let n = union.len();
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if (2..=m).contains(&size) {
            sets.push(
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| union[i].clone())
                    .collect(),
            );
        }
    }
    let mut out = BTreeSet::new();
    for set in sets {
        let unique: BTreeMap<String, PathExpr> = set.into_iter().map(|p| (p.serialize(), p)).collect();
        if unique.len() < 2 {
            continue;
        }
        out.insert(PathExpr::combine(unique.values()).unwrap().serialize());
    }
    out.into_iter().map(|s| PathExpr::parse(&s).unwrap()).collect()
}

pub struct Oracle {
    pub best: f64,
    pub max_seen: f64,
    pub layers_run: u32,
}

/// Walks the same candidate space as the search, scoring every path with a
/// plain `evaluate_path` call.
pub fn oracle(cfg: &SearchConfig, registry: &ToolRegistry) -> Oracle {
    let mut retained = Vec::new();
    for (name, kind, _) in TOOLS {
        let mut prev = None;
        for d in 0..=cfg.warmup_depth_cap {
            let path = PathExpr::group(vec![PathExpr::tool(name, d).unwrap()]).unwrap();
            let score = brute(&path, registry);
            if prev.is_some_and(|p| score < p) {
                break;
            }
            prev = Some(score);
            retained.push(Scored { path, score, kind });
        }
    }
    let mut max_seen = retained.iter().map(|s| s.score).fold(f64::MIN, f64::max);
    retained.sort_by(order);
    let mut best = retained[0].clone();
    let mut library: Vec<Scored> = Vec::new();
    let add = |lib: &mut Vec<Scored>, from: &[Scored]| {
        for kind in ToolKind::ALL {
            for s in top_k(from, kind, cfg.k) {
                if !lib.iter().any(|l| l.path == s.path) {
                    lib.push(s);
                }
            }
        }
    };
    add(&mut library, &retained);
    let mut layers_run = 0;
    for _ in 1..=cfg.n {
        layers_run += 1;
        let c = top_k(&library, ToolKind::Compute, cfg.k);
        let r = top_k(&library, ToolKind::Retrieval, cfg.k);
        let mut scored: Vec<Scored> = candidates(&c, &r, cfg.m)
            .into_iter()
            .map(|p| Scored {
                score: brute(&p, registry),
                kind: kind_of(&p),
                path: p,
            })
            .collect();
        max_seen = scored.iter().map(|s| s.score).fold(max_seen, f64::max);
        scored.sort_by(order);
        match scored.first() {
            Some(top) if top.score > best.score => {
                best = top.clone();
                add(&mut library, &scored);
            }
            _ => break,
        }
    }
    Oracle {
        best: best.score,
        max_seen,
        layers_run,
    }
}

pub struct Schedule<F: Fn(&PathExpr) -> f64 + Sync>(pub F);

impl<F: Fn(&PathExpr) -> f64 + Sync> PathEvaluator for Schedule<F> {
    fn evaluate(&self, path: &PathExpr, _: &ToolRegistry) -> Result<Evaluation, SearchError> {
        Ok(Evaluation {
            score: (self.0)(path),
            items: 1,
        })
    }
}

pub fn bare_registry(names: &[(String, ToolKind)]) -> ToolRegistry {
    let mut r = ToolRegistry::new("task");
    for (name, kind) in names {
        r.register(ToolSpec::simulated(name.as_str(), *kind, SimulatedBackend::new([])))
            .unwrap();
    }
    r
}

pub fn self_depth(path: &PathExpr) -> u32 {
    path.first_ref().self_depth()
}

/// Runs the search for one seed and compares it with the oracle, then
/// re-scores every leaderboard entry.
pub fn check_seed(seed: u64) -> Result<(), String> {
    let mut registry = library(seed);
    let fresh = library(seed);
    let ev = evaluator();
    let mut searcher = Searcher::new(&ev, cfg(seed)).map_err(|e| e.to_string())?;
    let report = searcher.search(&mut registry).map_err(|e| e.to_string())?;
    let o = oracle(&cfg(seed), &fresh);
    if report.best.score != o.best || o.best != o.max_seen {
        return Err(format!(
            "seed {seed}: search {} vs oracle {} (max {})",
            report.best.score, o.best, o.max_seen
        ));
    }
    if report.leaderboards.len() as u32 != o.layers_run + 1 {
        return Err(format!(
            "seed {seed}: {} boards, oracle ran {} layers",
            report.leaderboards.len(),
            o.layers_run
        ));
    }
    if report.leaderboards[0].selected.len() > 4 {
        return Err(format!(
            "seed {seed}: warmup kept {}",
            report.leaderboards[0].selected.len()
        ));
    }
    for entry in report.leaderboards.iter().flat_map(|b| &b.entries) {
        let again = brute(&entry.path, &fresh);
        if entry.score != again {
            return Err(format!(
                "seed {seed}: {} scored {} then {again}",
                entry.path, entry.score
            ));
        }
    }
    Ok(())
}
