//! Stack-path search: self-stacking warmup followed by layered combination
//! of the best paths per tool category.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{execute, AgentError, ExecutorBudget, LlmConfig, Policy, Termination, Trace};
use crate::expand::expand;
use crate::harness::dataset::Record;
use crate::metrics::MetricId;
use crate::path::{PathError, PathExpr};
use crate::registry::{RegistryError, ToolKind, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n: u32,
    pub k: usize,
    pub m: usize,
    pub warmup_depth_cap: u32,
    pub metric: MetricId,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n: 3,
            k: 2,
            m: 2,
            warmup_depth_cap: 3,
            metric: MetricId::Exact,
            seed: 0,
            jobs: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.into()));
        if self.n < 1 {
            return bad("n must be at least 1");
        }
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if self.m < 1 {
            return bad("m must be at least 1");
        }
        if self.warmup_depth_cap < 1 {
            return bad("warmup_depth_cap must be at least 1");
        }
        if self.jobs < 1 {
            return bad("jobs must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: PathExpr,
    pub score: f64,
    pub layer: u32,
    pub evaluated_items: u32,
    pub agent_count: u32,
    pub kind: ToolKind,
}

/// Score desc, then fewer agents, then smaller serialization.
pub fn rank(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.agent_count.cmp(&b.agent_count))
        .then_with(|| a.path.serialize().cmp(&b.path.serialize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBoard {
    pub layer: u32,
    pub entries: Vec<ScoredPath>,
    /// Paths encapsulated after this layer.
    pub selected: Vec<PathExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    NoImprovement,
    DepthLimit,
}

/// Search result. Layer 0 is the warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub leaderboards: Vec<LayerBoard>,
    pub best: ScoredPath,
    pub stop_reason: StopReason,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("registry has no base tools")]
    NoTools,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    pub items: u32,
}

/// Scores a path. Implementations must be deterministic for the search to be.
pub trait PathEvaluator: Sync {
    fn evaluate(&self, path: &PathExpr, registry: &ToolRegistry) -> Result<Evaluation, SearchError>;
}

/// Which policy drives each evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Greedy oracle over each item's gold answer.
    Greedy,
    Fixed {
        policy: Policy,
    },
    LlmHttp(LlmConfig),
}

impl PolicyChoice {
    pub fn for_item(&self, metric: MetricId, gold: &str) -> Policy {
        match self {
            PolicyChoice::Greedy => Policy::greedy(metric, gold),
            PolicyChoice::Fixed { policy } => policy.clone(),
            PolicyChoice::LlmHttp(cfg) => Policy::LlmHttp(cfg.clone()),
        }
    }
}

pub type TraceSink = Arc<dyn Fn(&PathExpr, &Record, &Trace) + Send + Sync>;

/// Evaluates paths by running every record and aggregating the metric.
#[derive(Clone)]
pub struct DatasetEvaluator {
    pub records: Vec<Record>,
    pub metric: MetricId,
    pub policy: PolicyChoice,
    pub budget: ExecutorBudget,
    pub trace_sink: Option<TraceSink>,
}

impl DatasetEvaluator {
    pub fn new(records: Vec<Record>, metric: MetricId, policy: PolicyChoice, budget: ExecutorBudget) -> Self {
        DatasetEvaluator {
            records,
            metric,
            policy,
            budget,
            trace_sink: None,
        }
    }

    pub fn with_trace_sink(mut self, sink: TraceSink) -> Self {
        self.trace_sink = Some(sink);
        self
    }
}

impl PathEvaluator for DatasetEvaluator {
    fn evaluate(&self, path: &PathExpr, registry: &ToolRegistry) -> Result<Evaluation, SearchError> {
        let scored = evaluate_path(
            path,
            &self.records,
            registry,
            &self.policy,
            self.budget,
            self.metric,
            self.trace_sink.as_ref(),
        )?;
        Ok(Evaluation {
            score: scored.score,
            items: scored.evaluated_items,
        })
    }
}

/// Runs `path` on every record and averages the metric. Runs that end in a
/// policy error count as failed items.
pub fn evaluate_path(
    path: &PathExpr,
    records: &[Record],
    registry: &ToolRegistry,
    policy: &PolicyChoice,
    budget: ExecutorBudget,
    metric: MetricId,
    sink: Option<&TraceSink>,
) -> Result<ScoredPath, SearchError> {
    if records.is_empty() {
        return Err(SearchError::EmptyDataset);
    }
    let tool = expand(path, registry)?;
    let mut finals: Vec<Option<String>> = Vec::with_capacity(records.len());
    for record in records {
        let trace = execute(&tool, &record.input, &policy.for_item(metric, &record.gold), budget)?;
        if let Some(sink) = sink {
            sink(path, record, &trace);
        }
        finals.push((trace.terminated_by != Termination::Error).then_some(trace.final_answer));
    }
    let pairs: Vec<(Option<&str>, &str)> = finals
        .iter()
        .zip(records)
        .map(|(f, r)| (f.as_deref(), r.gold.as_str()))
        .collect();
    Ok(ScoredPath {
        path: path.clone(),
        score: metric.aggregate(&pairs),
        layer: 0,
        evaluated_items: records.len() as u32,
        agent_count: path.agent_count(),
        kind: registry.kind_of(path)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchEvent {
    Scored { entry: ScoredPath, cached: bool },
    Encapsulated { name: String, path: PathExpr, score: f64 },
    Discontinued { tool: String, depth: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupResult {
    pub compute: Vec<ScoredPath>,
    pub retrieval: Vec<ScoredPath>,
    pub board: LayerBoard,
}

/// Warmup path for self-stack depth `d`: `['T_d']`.
pub fn self_stack(tool: &str, depth: u32) -> Result<PathExpr, PathError> {
    PathExpr::group(vec![PathExpr::tool(tool, depth)?])
}

/// Candidate paths for one layer, given the Top-k of each category.
pub fn layer_candidates(compute: &[PathExpr], retrieval: &[PathExpr], m: usize) -> Vec<PathExpr> {
    let mut sets: Vec<Vec<&PathExpr>> = Vec::new();
    if let (Some(c0), Some(r0)) = (compute.first(), retrieval.first()) {
        sets.extend(retrieval.iter().map(|r| vec![c0, r]));
        sets.extend(compute.iter().map(|c| vec![r0, c]));
    }
    let union: Vec<&PathExpr> = compute.iter().chain(retrieval).collect();
    for size in 2..=m.min(union.len()) {
        sets.extend(union.iter().copied().combinations(size));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for set in sets {
        let mut members: Vec<&PathExpr> = set;
        members.sort_by_key(|p| p.to_string());
        members.dedup_by_key(|p| p.to_string());
        if members.len() < 2 {
            continue;
        }
        let Ok(candidate) = PathExpr::combine(members) else {
            continue;
        };
        if seen.insert(candidate.serialize()) {
            out.push(candidate);
        }
    }
    out
}

type Observer<'e> = Box<dyn FnMut(&SearchEvent) + 'e>;

pub struct Searcher<'e, E: PathEvaluator> {
    evaluator: &'e E,
    cfg: SearchConfig,
    cache: BTreeMap<String, Evaluation>,
    hits: AtomicU64,
    evaluations: AtomicU64,
    pool: rayon::ThreadPool,
    observer: Option<Observer<'e>>,
}

impl<'e, E: PathEvaluator> Searcher<'e, E> {
    pub fn new(evaluator: &'e E, cfg: SearchConfig) -> Result<Self, SearchError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
        Ok(Searcher {
            evaluator,
            cfg,
            cache: BTreeMap::new(),
            hits: AtomicU64::new(0),
            evaluations: AtomicU64::new(0),
            pool,
            observer: None,
        })
    }

    pub fn with_observer(mut self, observer: impl FnMut(&SearchEvent) + 'e) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    /// Seeds the cache with scores from an earlier run.
    pub fn preload(&mut self, entries: impl IntoIterator<Item = (PathExpr, Evaluation)>) {
        for (path, eval) in entries {
            self.cache.insert(path.serialize(), eval);
        }
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(AtomicOrdering::Relaxed)
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(AtomicOrdering::Relaxed)
    }

    fn emit(&mut self, event: SearchEvent) {
        if let Some(obs) = self.observer.as_mut() {
            obs(&event);
        }
    }

    fn lookup(&self, path: &PathExpr) -> Option<Evaluation> {
        let hit = self.cache.get(&path.serialize()).copied();
        if hit.is_some() {
            self.hits.fetch_add(1, AtomicOrdering::Relaxed);
        }
        hit
    }

    fn to_scored(
        &self,
        path: PathExpr,
        eval: Evaluation,
        layer: u32,
        registry: &ToolRegistry,
    ) -> Result<ScoredPath, SearchError> {
        Ok(ScoredPath {
            agent_count: path.agent_count(),
            kind: registry.kind_of(&path)?,
            path,
            score: eval.score,
            layer,
            evaluated_items: eval.items,
        })
    }

    /// Scores a batch, evaluating uncached paths on the worker pool.
    fn score_batch(
        &mut self,
        paths: Vec<PathExpr>,
        layer: u32,
        registry: &ToolRegistry,
    ) -> Result<Vec<ScoredPath>, SearchError> {
        let cached: Vec<Option<Evaluation>> = paths.iter().map(|p| self.lookup(p)).collect();
        let todo: Vec<&PathExpr> = paths
            .iter()
            .zip(&cached)
            .filter(|(_, c)| c.is_none())
            .map(|(p, _)| p)
            .collect();
        let evaluator = self.evaluator;
        let counter = &self.evaluations;
        let fresh: Vec<Result<Evaluation, SearchError>> = self.pool.install(|| {
            todo.par_iter()
                .map(|p| {
                    counter.fetch_add(1, AtomicOrdering::Relaxed);
                    evaluator.evaluate(p, registry)
                })
                .collect()
        });
        let mut fresh = fresh.into_iter();
        let mut out = Vec::with_capacity(paths.len());
        for (path, hit) in paths.into_iter().zip(cached) {
            let (eval, was_cached) = match hit {
                Some(e) => (e, true),
                None => {
                    let e = fresh.next().expect("one result per uncached path")?;
                    self.cache.insert(path.serialize(), e);
                    (e, false)
                }
            };
            let entry = self.to_scored(path, eval, layer, registry)?;
            self.emit(SearchEvent::Scored {
                entry: entry.clone(),
                cached: was_cached,
            });
            out.push(entry);
        }
        Ok(out)
    }

    fn encapsulate_top(&mut self, board: &mut LayerBoard, registry: &mut ToolRegistry) -> Result<(), SearchError> {
        for kind in ToolKind::ALL {
            let top: Vec<ScoredPath> = board
                .entries
                .iter()
                .filter(|e| e.kind == kind)
                .take(self.cfg.k)
                .cloned()
                .collect();
            for entry in top {
                if registry.encapsulation_of(&entry.path).is_none() {
                    let spec = registry.encapsulate(&entry.path, entry.score, None)?;
                    self.emit(SearchEvent::Encapsulated {
                        name: spec.name.clone(),
                        path: entry.path.clone(),
                        score: entry.score,
                    });
                }
                board.selected.push(entry.path);
            }
        }
        Ok(())
    }

    /// Self-stacks every base tool until its score drops or the depth cap is
    /// reached, then encapsulates the Top-k of each category.
    pub fn warmup(&mut self, registry: &mut ToolRegistry) -> Result<WarmupResult, SearchError> {
        let tools: Vec<String> = ToolKind::ALL
            .iter()
            .flat_map(|&k| registry.base_tools(k))
            .map(|t| t.name.clone())
            .collect();
        if tools.is_empty() {
            return Err(SearchError::NoTools);
        }
        let cap = self.cfg.warmup_depth_cap;
        let mut retained: Vec<ScoredPath> = Vec::new();
        // Depths of one tool depend on each other; different tools do not,
        // so each round evaluates the next depth of every live tool at once.
        let mut live: Vec<(String, Option<f64>)> = tools.into_iter().map(|t| (t, None)).collect();
        for depth in 0..=cap {
            if live.is_empty() {
                break;
            }
            let paths = live
                .iter()
                .map(|(t, _)| self_stack(t, depth))
                .collect::<Result<Vec<_>, _>>()?;
            let scored = self.score_batch(paths, 0, registry)?;
            let mut next = Vec::new();
            for ((tool, prev), entry) in live.into_iter().zip(scored) {
                if prev.is_some_and(|p| entry.score < p) {
                    self.emit(SearchEvent::Discontinued { tool, depth });
                    continue;
                }
                next.push((tool, Some(entry.score)));
                retained.push(entry);
            }
            live = next;
        }
        retained.sort_by(rank);
        let mut board = LayerBoard {
            layer: 0,
            entries: retained,
            selected: Vec::new(),
        };
        self.encapsulate_top(&mut board, registry)?;
        let of_kind = |k: ToolKind| {
            board
                .entries
                .iter()
                .filter(|e| e.kind == k)
                .take(self.cfg.k)
                .cloned()
                .collect()
        };
        Ok(WarmupResult {
            compute: of_kind(ToolKind::Compute),
            retrieval: of_kind(ToolKind::Retrieval),
            board,
        })
    }

    /// Top-k encapsulated paths of one category, ranked by recorded score.
    fn library_top(&self, registry: &ToolRegistry, kind: ToolKind) -> Vec<PathExpr> {
        let mut entries: Vec<ScoredPath> = registry
            .encapsulated()
            .filter(|(spec, _)| spec.kind == kind)
            .map(|(_, prov)| ScoredPath {
                path: prov.path.clone(),
                score: prov.score,
                layer: 0,
                evaluated_items: 1,
                agent_count: prov.path.agent_count(),
                kind,
            })
            .collect();
        entries.sort_by(rank);
        entries.into_iter().take(self.cfg.k).map(|e| e.path).collect()
    }

    pub fn multilayer(
        &mut self,
        registry: &mut ToolRegistry,
        warmup: WarmupResult,
    ) -> Result<SearchReport, SearchError> {
        let mut best = warmup.board.entries.first().cloned().ok_or(SearchError::NoTools)?;
        let mut boards = vec![warmup.board];
        let mut stop_reason = StopReason::DepthLimit;
        for layer in 1..=self.cfg.n {
            let compute = self.library_top(registry, ToolKind::Compute);
            let retrieval = self.library_top(registry, ToolKind::Retrieval);
            let candidates = layer_candidates(&compute, &retrieval, self.cfg.m);
            let mut entries = self.score_batch(candidates, layer, registry)?;
            entries.sort_by(rank);
            let mut board = LayerBoard {
                layer,
                entries,
                selected: Vec::new(),
            };
            let improved = board.entries.first().filter(|top| top.score > best.score).cloned();
            match improved {
                None => {
                    boards.push(board);
                    stop_reason = StopReason::NoImprovement;
                    break;
                }
                Some(top) => {
                    best = top;
                    self.encapsulate_top(&mut board, registry)?;
                    boards.push(board);
                }
            }
        }
        Ok(SearchReport {
            leaderboards: boards,
            best,
            stop_reason,
        })
    }

    pub fn search(&mut self, registry: &mut ToolRegistry) -> Result<SearchReport, SearchError> {
        let warmup = self.warmup(registry)?;
        self.multilayer(registry, warmup)
    }
}
