use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{Action, ExecutorBudget, LlmConfig, Policy};
use crate::backend::{CommandBackend, HttpBackend, SimulatedBackend};
use crate::harness::dataset::Schema;
use crate::hash::derive_seed;
use crate::metrics::{MetricId, Tokenizer};
use crate::prompts::TemplateId;
use crate::registry::{BackendBinding, ToolKind, ToolRegistry, ToolSpec};
use crate::search::{PolicyChoice, SearchConfig};

#[derive(Debug, Error)]
#[error("config error at {field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Design,
    Captioning,
    Property,
    Reaction,
}

impl TaskType {
    pub fn default_metric(self) -> MetricId {
        match self {
            TaskType::Design => MetricId::Bleu {
                n: 2,
                tokenizer: Tokenizer::Char,
            },
            TaskType::Captioning => MetricId::Bleu {
                n: 2,
                tokenizer: Tokenizer::Whitespace,
            },
            TaskType::Property => MetricId::AucRoc,
            TaskType::Reaction => MetricId::Exact,
        }
    }

    pub fn default_template(self) -> TemplateId {
        match self {
            TaskType::Design => TemplateId::MoleculeDesign,
            TaskType::Captioning => TemplateId::Captioning,
            TaskType::Property => TemplateId::PropertyPrediction,
            TaskType::Reaction => TemplateId::ReactionPrediction,
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskType::Design => "design",
            TaskType::Captioning => "captioning",
            TaskType::Property => "property",
            TaskType::Reaction => "reaction",
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: String,
    #[serde(default)]
    task_type: Option<TaskType>,
    #[serde(default)]
    metric: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    dataset: RawDataset,
    #[serde(default)]
    search: RawSearch,
    #[serde(default)]
    budget: RawBudget,
    #[serde(default)]
    policy: RawPolicy,
    #[serde(default)]
    tools: Vec<RawTool>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    train: PathBuf,
    #[serde(default)]
    test: Option<PathBuf>,
    #[serde(default)]
    schema: Option<Schema>,
    #[serde(default)]
    train_subset: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSearch {
    #[serde(default = "d_n")]
    n: u32,
    #[serde(default = "d_k")]
    k: usize,
    #[serde(default = "d_m")]
    m: usize,
    #[serde(default = "d_cap")]
    warmup_depth_cap: u32,
    #[serde(default = "d_jobs")]
    jobs: usize,
}

fn d_n() -> u32 {
    3
}
fn d_k() -> usize {
    2
}
fn d_m() -> usize {
    2
}
fn d_cap() -> u32 {
    3
}
fn d_jobs() -> usize {
    1
}

impl Default for RawSearch {
    fn default() -> Self {
        RawSearch {
            n: d_n(),
            k: d_k(),
            m: d_m(),
            warmup_depth_cap: d_cap(),
            jobs: d_jobs(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBudget {
    #[serde(default = "d_iter")]
    max_iter: u32,
    #[serde(default = "d_cap_calls")]
    global_call_cap: u32,
}

fn d_iter() -> u32 {
    8
}
fn d_cap_calls() -> u32 {
    64
}

impl Default for RawBudget {
    fn default() -> Self {
        RawBudget {
            max_iter: d_iter(),
            global_call_cap: d_cap_calls(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    endpoint: Option<String>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    template: Option<TemplateId>,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    timeout_ms: Option<u64>,
    #[serde(default)]
    actions: Vec<Action>,
    #[serde(default)]
    nested: Vec<Action>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTool {
    name: String,
    kind: ToolKind,
    #[serde(default)]
    description: Option<String>,
    backend: String,
    #[serde(default)]
    table: Option<BTreeMap<String, String>>,
    #[serde(default)]
    table_file: Option<PathBuf>,
    #[serde(default)]
    fallback: Option<String>,
    #[serde(default)]
    error_rate: Option<f64>,
    #[serde(default)]
    latency_ms: Option<u64>,
    #[serde(default)]
    endpoint: Option<String>,
    #[serde(default)]
    timeout_ms: Option<u64>,
    #[serde(default)]
    retries: Option<u32>,
    #[serde(default)]
    program: Option<PathBuf>,
    #[serde(default)]
    args: Vec<String>,
}

/// Tool declaration after validation. Simulated tables are loaded inline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolDecl {
    pub name: String,
    pub kind: ToolKind,
    pub description: String,
    pub backend: BackendDecl,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendDecl {
    Simulated(SimulatedBackend),
    Http(HttpBackend),
    Command {
        program: PathBuf,
        args: Vec<String>,
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetConfig {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub schema: Schema,
    pub train_subset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub task: String,
    pub task_type: TaskType,
    pub metric: MetricId,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub search: SearchConfig,
    pub budget: ExecutorBudget,
    pub policy: PolicyChoice,
    pub tools: Vec<ToolDecl>,
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// The part of a config that determines results. Output location and
/// worker count are excluded.
#[derive(Serialize)]
struct Canonical<'a> {
    task: &'a str,
    task_type: TaskType,
    metric: String,
    seed: u64,
    dataset: &'a DatasetConfig,
    search: (u32, usize, usize, u32),
    budget: ExecutorBudget,
    policy: &'a PolicyChoice,
    tools: &'a [ToolDecl],
}

impl TaskConfig {
    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = Canonical {
            task: &self.task,
            task_type: self.task_type,
            metric: self.metric.to_string(),
            seed: self.seed,
            dataset: &self.dataset,
            search: (
                self.search.n,
                self.search.k,
                self.search.m,
                self.search.warmup_depth_cap,
            ),
            budget: self.budget,
            policy: &self.policy,
            tools: &self.tools,
        };
        // Going through Value sorts object keys.
        let value = serde_json::to_value(&canonical).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn build_registry(&self) -> Result<ToolRegistry, ConfigError> {
        let mut registry = ToolRegistry::new(&self.task);
        for (i, tool) in self.tools.iter().enumerate() {
            let backend = match &tool.backend {
                BackendDecl::Simulated(sim) => BackendBinding::Simulated(sim.clone()),
                BackendDecl::Http(http) => BackendBinding::Http(http.clone()),
                BackendDecl::Command {
                    program,
                    args,
                    timeout_ms,
                } => BackendBinding::Command(CommandBackend::new(program.clone(), args.clone(), *timeout_ms)),
            };
            registry
                .register(ToolSpec::new(&tool.name, tool.kind, &tool.description, backend))
                .map_err(|e| ConfigError::new(format!("tools[{i}]"), e.to_string()))?;
        }
        Ok(registry)
    }
}

pub fn load_config(path: &Path, overrides: Overrides) -> Result<TaskConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, overrides)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn existing(base: &Path, p: &Path, field: &str) -> Result<PathBuf, ConfigError> {
    let full = resolve(base, p);
    if !full.is_file() {
        return Err(ConfigError::new(field, format!("file not found: {}", full.display())));
    }
    Ok(full)
}

/// Parses config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path, overrides: Overrides) -> Result<TaskConfig, ConfigError> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| ConfigError::new("<toml>", e.to_string().trim().to_string()))?;
    if raw.task.is_empty() || raw.task.contains(|c: char| c.is_whitespace()) {
        return Err(ConfigError::new("task", "must be a non-empty identifier"));
    }
    let task_type = raw.task_type.unwrap_or(TaskType::Design);
    let metric = match &raw.metric {
        Some(m) => MetricId::from_str(m).map_err(|e| ConfigError::new("metric", e.to_string()))?,
        None => task_type.default_metric(),
    };
    let seed = overrides.seed.unwrap_or(raw.seed);

    let dataset = DatasetConfig {
        train: existing(base, &raw.dataset.train, "dataset.train")?,
        test: raw
            .dataset
            .test
            .as_deref()
            .map(|t| existing(base, t, "dataset.test"))
            .transpose()?,
        schema: raw.dataset.schema.unwrap_or(if task_type == TaskType::Property {
            Schema::Classification
        } else {
            Schema::Generation
        }),
        train_subset: raw.dataset.train_subset,
    };
    if dataset.train_subset == Some(0) {
        return Err(ConfigError::new("dataset.train_subset", "must be positive"));
    }

    let search = SearchConfig {
        n: raw.search.n,
        k: raw.search.k,
        m: raw.search.m,
        warmup_depth_cap: raw.search.warmup_depth_cap,
        metric,
        seed,
        jobs: overrides.jobs.unwrap_or(raw.search.jobs),
    };
    search
        .validate()
        .map_err(|e| ConfigError::new("search", e.to_string()))?;
    let budget = ExecutorBudget::new(raw.budget.max_iter, raw.budget.global_call_cap)
        .map_err(|e| ConfigError::new("budget", e.to_string()))?;

    let policy = parse_policy(raw.policy, task_type)?;

    if raw.tools.is_empty() {
        return Err(ConfigError::new("tools", "at least one tool is required"));
    }
    let tools = raw
        .tools
        .into_iter()
        .enumerate()
        .map(|(i, t)| parse_tool(t, i, base, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let cfg = TaskConfig {
        task: raw.task,
        task_type,
        metric,
        seed,
        output_dir: resolve(base, &raw.output_dir),
        dataset,
        search,
        budget,
        policy,
        tools,
    };
    cfg.build_registry()?;
    Ok(cfg)
}

fn parse_policy(raw: RawPolicy, task_type: TaskType) -> Result<PolicyChoice, ConfigError> {
    let choice = match raw.kind.as_deref().unwrap_or("greedy") {
        "greedy" => PolicyChoice::Greedy,
        "scripted" => PolicyChoice::Fixed {
            policy: Policy::Scripted {
                actions: raw.actions,
                nested: raw.nested,
            },
        },
        "llm_http" => {
            let need = |v: Option<String>, f: &str| {
                v.ok_or_else(|| ConfigError::new(format!("policy.{f}"), "required for llm_http"))
            };
            PolicyChoice::LlmHttp(LlmConfig {
                endpoint: need(raw.endpoint, "endpoint")?,
                model: need(raw.model, "model")?,
                template: raw.template.unwrap_or(task_type.default_template()),
                temperature: raw.temperature.unwrap_or(0.0),
                timeout_ms: raw.timeout_ms.unwrap_or(60_000),
            })
        }
        other => return Err(ConfigError::new("policy.kind", format!("unknown policy {other:?}"))),
    };
    if let PolicyChoice::Fixed { policy } = &choice {
        policy
            .validate()
            .map_err(|e| ConfigError::new("policy", e.to_string()))?;
    }
    if let PolicyChoice::LlmHttp(cfg) = &choice {
        Policy::LlmHttp(cfg.clone())
            .validate()
            .map_err(|e| ConfigError::new("policy.temperature", e.to_string()))?;
    }
    Ok(choice)
}

#[derive(Deserialize)]
struct TableLine {
    input: String,
    output: String,
}

fn load_table(path: &Path, field: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(field, e.to_string()))?;
    if path.extension().is_none_or(|e| e != "jsonl") {
        return serde_json::from_str(&text).map_err(|e| ConfigError::new(field, e.to_string()));
    }
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: TableLine =
            serde_json::from_str(line).map_err(|e| ConfigError::new(field, format!("line {}: {e}", i + 1)))?;
        map.insert(row.input.trim().to_string(), row.output);
    }
    Ok(map)
}

fn parse_tool(raw: RawTool, i: usize, base: &Path, seed: u64) -> Result<ToolDecl, ConfigError> {
    let field = |f: &str| format!("tools[{i}].{f}");
    let backend = match raw.backend.as_str() {
        "simulated" => {
            let mut table = raw.table.unwrap_or_default();
            if let Some(file) = &raw.table_file {
                let path = existing(base, file, &field("table_file"))?;
                table.extend(load_table(&path, &field("table_file"))?);
            }
            let error_rate = raw.error_rate.unwrap_or(0.0);
            if !(0.0..=1.0).contains(&error_rate) {
                return Err(ConfigError::new(field("error_rate"), "must be within [0, 1]"));
            }
            BackendDecl::Simulated(SimulatedBackend {
                table: table.into_iter().map(|(k, v)| (k.trim().to_string(), v)).collect(),
                fallback: raw.fallback,
                error_rate,
                seed: derive_seed(seed, &[raw.name.as_bytes()]),
                latency_ms: raw.latency_ms.unwrap_or(0),
            })
        }
        "http" => {
            let endpoint = raw
                .endpoint
                .ok_or_else(|| ConfigError::new(field("endpoint"), "required for http tools"))?;
            let mut http = HttpBackend::new(endpoint);
            if let Some(t) = raw.timeout_ms {
                http.timeout_ms = t;
            }
            if let Some(r) = raw.retries {
                http.retries = r;
            }
            BackendDecl::Http(http)
        }
        "command" => BackendDecl::Command {
            program: raw
                .program
                .ok_or_else(|| ConfigError::new(field("program"), "required for command tools"))?,
            args: raw.args,
            timeout_ms: raw.timeout_ms.unwrap_or(30_000),
        },
        other => return Err(ConfigError::new(field("backend"), format!("unknown backend {other:?}"))),
    };
    if matches!(backend, BackendDecl::Http(ref h) if h.timeout_ms == 0)
        || matches!(backend, BackendDecl::Command { timeout_ms: 0, .. })
    {
        return Err(ConfigError::new(field("timeout_ms"), "must be positive"));
    }
    Ok(ToolDecl {
        description: raw.description.unwrap_or_else(|| format!("{} tool", raw.name)),
        name: raw.name,
        kind: raw.kind,
        backend,
    })
}
