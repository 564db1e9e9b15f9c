//! Config-driven runs: loading, search, evaluation, topology baselines and
//! reporting, all recorded to one JSONL run log.

pub mod config;
pub mod dataset;
pub mod report;
pub mod runlog;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{execute, AgentError, Trace};
use crate::behavior::{classify, Histogram};
use crate::expand::expand;
use crate::metrics::{classification_score, MetricId};
use crate::path::{PathError, PathExpr};
use crate::registry::{RegistryError, ToolRegistry};
use crate::search::{
    evaluate_path, DatasetEvaluator, PolicyChoice, ScoredPath, SearchError, SearchEvent, SearchReport, Searcher,
    TraceSink, WarmupResult,
};
use crate::topology::{build_graph, simulate, Aggregator, NodeAgent, Structure, TopologyError, TranscriptResult};

use config::{load_config, ConfigError, Overrides, TaskConfig};
use dataset::{load_dataset, Dataset, DatasetError, Record};
use report::{Prediction, ReportError};
use runlog::{kind, read_entries, resume_scores, LogEntry, RunLog, RunLogError};

pub const RUN_LOG: &str = "run.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const WARMUP_JSON: &str = "warmup.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

impl HarnessError {
    /// Whether the caller supplied bad input, as opposed to a run failing.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::Usage(_) | HarnessError::Path(_) | HarnessError::Dataset(_)
        ) || matches!(self, HarnessError::Report(ReportError::EmptyLog))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub evaluations: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub path: String,
    pub id: String,
    pub gold: String,
    pub trace: Trace,
}

/// A loaded config together with its run log.
pub struct Workspace {
    pub config: TaskConfig,
    pub hash: String,
    pub log: Arc<RunLog>,
}

impl Workspace {
    pub fn open(config_path: &Path, overrides: Overrides, output_dir: Option<PathBuf>) -> Result<Self, HarnessError> {
        let mut config = load_config(config_path, overrides)?;
        if let Some(dir) = output_dir {
            config.output_dir = dir;
        }
        Self::from_config(config)
    }

    pub fn from_config(config: TaskConfig) -> Result<Self, HarnessError> {
        let hash = config.hash();
        let log = Arc::new(RunLog::open(&config.output_dir.join(RUN_LOG), &hash)?);
        Ok(Workspace { config, hash, log })
    }

    pub fn registry(&self) -> Result<ToolRegistry, HarnessError> {
        Ok(self.config.build_registry()?)
    }

    pub fn train(&self) -> Result<Dataset, HarnessError> {
        let mut data = load_dataset(&self.config.dataset.train, self.config.dataset.schema)?;
        if let Some(n) = self.config.dataset.train_subset {
            data.truncate(n);
        }
        Ok(data)
    }

    fn trace_sink(&self) -> TraceSink {
        let log = Arc::clone(&self.log);
        Arc::new(move |path: &PathExpr, record: &Record, trace: &Trace| {
            let entry = TraceRecord {
                path: path.to_string(),
                id: record.id.clone(),
                gold: record.gold.clone(),
                trace: trace.clone(),
            };
            // Trace logging is best effort; scores do not depend on it.
            let _ = log.append(kind::TRACE, &entry);
        })
    }

    fn evaluator(&self, records: Vec<Record>) -> DatasetEvaluator {
        DatasetEvaluator::new(
            records,
            self.config.metric,
            self.config.policy.clone(),
            self.config.budget,
        )
        .with_trace_sink(self.trace_sink())
    }

    fn observer(&self) -> impl FnMut(&SearchEvent) + 'static {
        let log = Arc::clone(&self.log);
        move |event: &SearchEvent| {
            let _ = match event {
                SearchEvent::Scored { entry, cached: false } => log.append(kind::SCORED_PATH, entry),
                SearchEvent::Scored { cached: true, .. } => Ok(()),
                SearchEvent::Encapsulated { name, path, score } => log.append(
                    kind::ENCAPSULATED,
                    &serde_json::json!({"name": name, "path": path, "score": score}),
                ),
                SearchEvent::Discontinued { tool, depth } => {
                    log.append(kind::DISCONTINUED, &serde_json::json!({"tool": tool, "depth": depth}))
                }
            };
        }
    }

    fn resumed(&self) -> Result<Vec<(PathExpr, crate::search::Evaluation)>, HarnessError> {
        let entries = read_entries(self.log.path())?;
        Ok(resume_scores(&entries, &self.hash))
    }

    pub fn warmup(&self) -> Result<WarmupResult, HarnessError> {
        let mut registry = self.registry()?;
        let evaluator = self.evaluator(self.train()?.records);
        let mut searcher = Searcher::new(&evaluator, self.config.search.clone())?.with_observer(self.observer());
        searcher.preload(self.resumed()?);
        let result = searcher.warmup(&mut registry)?;
        let mut text = serde_json::to_string_pretty(&result).expect("warmup serializes");
        text.push('\n');
        std::fs::write(self.config.output_dir.join(WARMUP_JSON), text).map_err(|source| ReportError::Io {
            path: WARMUP_JSON.into(),
            source,
        })?;
        Ok(result)
    }

    /// Full search. Scores already in the run log under the same config
    /// hash are reused when `resume` is set.
    pub fn optimize(&self, resume: bool) -> Result<(SearchReport, SearchStats), HarnessError> {
        let mut registry = self.registry()?;
        let evaluator = self.evaluator(self.train()?.records);
        let mut searcher = Searcher::new(&evaluator, self.config.search.clone())?.with_observer(self.observer());
        if resume {
            searcher.preload(self.resumed()?);
        }
        let report = searcher.search(&mut registry)?;
        let stats = SearchStats {
            evaluations: searcher.evaluations(),
            cache_hits: searcher.cache_hits(),
        };
        self.log.append(kind::REPORT, &report)?;
        report::write_search_report(&self.config.output_dir.join(REPORT_JSON), &report)?;
        Ok((report, stats))
    }

    /// Runs one input through `path`.
    pub fn exec(&self, path: &PathExpr, input: &str, gold: Option<&str>) -> Result<Trace, HarnessError> {
        let registry = self.registry()?;
        if self.config.policy == PolicyChoice::Greedy && gold.is_none() {
            return Err(HarnessError::Usage("the greedy policy needs --gold".into()));
        }
        let tool = expand(path, &registry)?;
        let policy = self.config.policy.for_item(self.config.metric, gold.unwrap_or(""));
        let trace = execute(&tool, input, &policy, self.config.budget)?;
        self.log.append(
            kind::TRACE,
            &TraceRecord {
                path: path.to_string(),
                id: String::new(),
                gold: gold.unwrap_or("").to_string(),
                trace: trace.clone(),
            },
        )?;
        Ok(trace)
    }

    /// Scores `path` on a dataset file and logs one prediction per item.
    pub fn eval(&self, path: &PathExpr, dataset: &Path) -> Result<ScoredPath, HarnessError> {
        let registry = self.registry()?;
        let data = load_dataset(dataset, self.config.dataset.schema)?;
        let collected: Arc<Mutex<Vec<(Record, Trace)>>> = Arc::default();
        let sink_log = self.trace_sink();
        let sink_store = Arc::clone(&collected);
        let sink: TraceSink = Arc::new(move |p: &PathExpr, r: &Record, t: &Trace| {
            sink_log(p, r, t);
            sink_store
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push((r.clone(), t.clone()));
        });
        let scored = evaluate_path(
            path,
            &data.records,
            &registry,
            &self.config.policy,
            self.config.budget,
            self.config.metric,
            Some(&sink),
        )?;
        let runs = std::mem::take(&mut *collected.lock().unwrap_or_else(|e| e.into_inner()));
        for (record, trace) in runs {
            let prediction =
                (trace.terminated_by != crate::agent::Termination::Error).then(|| trace.final_answer.clone());
            if self.config.metric == MetricId::AucRoc || self.config.metric == MetricId::Accuracy {
                if let Some(p) = &prediction {
                    if classification_score(p).is_err() {
                        self.log
                            .append(kind::UNPARSEABLE, &serde_json::json!({"id": record.id, "answer": p}))?;
                    }
                }
            }
            self.log.append(
                kind::PREDICTION,
                &Prediction {
                    path: path.to_string(),
                    id: record.id,
                    input: record.input,
                    gold: record.gold,
                    prediction,
                    group: record.group,
                },
            )?;
        }
        Ok(scored)
    }

    /// Runs a topology baseline. Nodes are LLM agents when the config policy
    /// is an LLM endpoint, otherwise the configured tools in turn.
    pub fn topo(&self, spec: &TopoSpec) -> Result<TopoOutcome, HarnessError> {
        let registry = self.registry()?;
        let tools: Vec<_> = registry.tools().cloned().collect();
        if tools.is_empty() {
            return Err(SearchError::NoTools.into());
        }
        let (agents, aggregator): (Vec<NodeAgent>, Aggregator) = match &self.config.policy {
            PolicyChoice::LlmHttp(cfg) => (
                (0..spec.num).map(|_| NodeAgent::Llm(cfg.clone())).collect(),
                Aggregator::LlmFinalRefer(cfg.clone()),
            ),
            _ => (
                (0..spec.num as usize)
                    .map(|i| NodeAgent::Tool(Arc::clone(&tools[i % tools.len()])))
                    .collect(),
                Aggregator::Majority,
            ),
        };
        let outcome = run_topology(spec, &agents, &aggregator, self.config.metric)?;
        self.log.append(kind::TRANSCRIPT, &outcome)?;
        Ok(outcome)
    }

    pub fn entries(&self) -> Result<Vec<LogEntry>, HarnessError> {
        Ok(read_entries(self.log.path())?)
    }
}

#[derive(Debug, Clone)]
pub struct TopoSpec {
    pub structure: Structure,
    pub num: u32,
    pub rounds: u32,
    pub seed: u64,
    pub question: String,
    pub gold: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopoOutcome {
    pub transcript: TranscriptResult,
    pub score: Option<f64>,
}

impl TopoOutcome {
    pub const CSV_HEADER: &'static str = "structure,num,score,tokens,time_ms";

    pub fn csv_row(&self) -> String {
        let t = &self.transcript;
        format!(
            "{},{},{},{},{}",
            t.structure,
            t.num_agents,
            self.score.map(|s| format!("{s:.4}")).unwrap_or_default(),
            t.token_count,
            t.wall_time_ms
        )
    }
}

pub fn run_topology(
    spec: &TopoSpec,
    agents: &[NodeAgent],
    aggregator: &Aggregator,
    metric: MetricId,
) -> Result<TopoOutcome, HarnessError> {
    let graph = build_graph(spec.structure, spec.num, spec.rounds, spec.seed)?;
    let transcript = simulate(&graph, &spec.question, agents, aggregator)?;
    let score = spec.gold.as_deref().map(|g| metric.score(&transcript.final_answer, g));
    Ok(TopoOutcome { transcript, score })
}

/// Behavior histogram over the top-level traces in a run log. Traces
/// without a gold answer are skipped.
pub fn classify_entries(entries: &[LogEntry], metric: MetricId) -> Result<Histogram, HarnessError> {
    let mut histogram = Histogram::default();
    for e in entries.iter().filter(|e| e.kind == kind::TRACE) {
        let rec: TraceRecord = serde_json::from_value(e.data.clone())
            .map_err(|err| HarnessError::Report(ReportError::Malformed(err.to_string())))?;
        if rec.gold.is_empty() {
            continue;
        }
        *histogram
            .counts
            .entry(classify(&rec.trace, &rec.gold, metric))
            .or_insert(0) += 1;
    }
    Ok(histogram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::BehaviorPattern;
    use config::parse_config;

    fn workspace(dir: &Path) -> Workspace {
        std::fs::write(
            dir.join("train.jsonl"),
            "{\"id\":\"1\",\"input\":\"Cyclopropane\",\"gold\":\"C1CC1\"}\n{\"id\":\"2\",\"input\":\"Ethanol\",\"gold\":\"CCO\"}\n",
        )
        .unwrap();
        let text = r#"
task = "t"
metric = "exact"
[dataset]
train = "train.jsonl"
[search]
n = 2
k = 1
m = 2
warmup_depth_cap = 1
[[tools]]
name = "Lookup"
kind = "retrieval"
backend = "simulated"
table = { "Cyclopropane" = "C1CC1", "Ethanol" = "CCO" }
[[tools]]
name = "Echo"
kind = "compute"
backend = "simulated"
fallback = "{input}"
"#;
        Workspace::from_config(parse_config(text, dir, Overrides::default()).unwrap()).unwrap()
    }

    #[test]
    fn optimize_writes_report_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let (report, first) = ws.optimize(true).unwrap();
        assert_eq!(report.best.score, 1.0);
        assert!(first.evaluations > 0);
        let (again, second) = ws.optimize(true).unwrap();
        assert_eq!(again, report);
        assert_eq!(second.evaluations, 0);
        assert!(second.cache_hits > 0);
        assert!(dir.path().join("runs").join(REPORT_JSON).is_file());
        let entries = ws.entries().unwrap();
        assert!(entries.iter().any(|e| e.kind == kind::SCORED_PATH));
        assert!(entries.iter().all(|e| e.config_hash == ws.hash));
    }

    #[test]
    fn eval_then_report_and_classify() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let path = PathExpr::parse("['Lookup_0','Echo_0']").unwrap();
        let scored = ws.eval(&path, &dir.path().join("train.jsonl")).unwrap();
        assert_eq!(scored.score, 1.0);
        let entries = ws.entries().unwrap();
        let table = report::build_table(&entries, config::TaskType::Design).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].values[0], 1.0);
        let h = classify_entries(&entries, MetricId::Exact).unwrap();
        assert_eq!(h.total(), 2);
        // Both tools see the same input and only one is right.
        assert_eq!(h.get(BehaviorPattern::Judge), 2);
    }

    #[test]
    fn greedy_exec_requires_gold() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let path = PathExpr::parse("['Lookup_0']").unwrap();
        let err = ws.exec(&path, "Ethanol", None).unwrap_err();
        assert!(err.is_usage());
        assert_eq!(ws.exec(&path, "Ethanol", Some("CCO")).unwrap().final_answer, "CCO");
    }
}
