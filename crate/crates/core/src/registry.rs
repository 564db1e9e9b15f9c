use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ExecutorBudget;
use crate::backend::{CommandBackend, HttpBackend, SimulatedBackend};
use crate::expand::{expand, ExecutableTool};
use crate::path::PathExpr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolKind {
    Compute,
    Retrieval,
}

impl ToolKind {
    pub const ALL: [ToolKind; 2] = [ToolKind::Compute, ToolKind::Retrieval];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::Compute => "compute",
            ToolKind::Retrieval => "retrieval",
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "compute" => Ok(ToolKind::Compute),
            "retrieval" => Ok(ToolKind::Retrieval),
            other => Err(format!("unknown tool kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BackendBinding {
    Simulated(SimulatedBackend),
    Http(HttpBackend),
    Command(CommandBackend),
    /// A stack path bound as a single tool. `expansion` is resolved when the
    /// tool is registered, so it can only refer to earlier registrations.
    Encapsulated {
        path: PathExpr,
        budget: Option<ExecutorBudget>,
        expansion: Arc<ExecutableTool>,
    },
}

impl BackendBinding {
    fn validate(&self) -> Result<(), String> {
        match self {
            BackendBinding::Simulated(s) if !(0.0..=1.0).contains(&s.error_rate) => {
                Err(format!("error_rate {} outside [0, 1]", s.error_rate))
            }
            BackendBinding::Http(h) if h.timeout_ms == 0 => Err("http timeout must be positive".into()),
            BackendBinding::Command(c) if c.timeout_ms == 0 => Err("command timeout must be positive".into()),
            _ => Ok(()),
        }
    }

    pub fn is_encapsulated(&self) -> bool {
        matches!(self, BackendBinding::Encapsulated { .. })
    }
}

#[derive(Debug, Clone)]
pub struct ToolSpec {
    pub name: String,
    pub kind: ToolKind,
    pub description: String,
    pub backend: BackendBinding,
}

impl ToolSpec {
    pub fn new(
        name: impl Into<String>,
        kind: ToolKind,
        description: impl Into<String>,
        backend: BackendBinding,
    ) -> Self {
        ToolSpec {
            name: name.into(),
            kind,
            description: description.into(),
            backend,
        }
    }

    pub fn simulated(name: impl Into<String>, kind: ToolKind, backend: SimulatedBackend) -> Self {
        let name = name.into();
        let description = format!("{name} tool");
        ToolSpec::new(name, kind, description, BackendBinding::Simulated(backend))
    }
}

#[derive(Debug, Clone, Error)]
pub enum RegistryError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("tool {0:?} is already registered")]
    DuplicateName(String),
    #[error("invalid tool name {name:?}: {reason}")]
    InvalidName { name: String, reason: String },
    #[error("invalid backend for {name:?}: {reason}")]
    InvalidBinding { name: String, reason: String },
    #[error("path {path} is already encapsulated as {:?}", existing.name)]
    DuplicatePath { path: String, existing: Arc<ToolSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathExpr,
    pub score: f64,
}

/// The tool library. Base tools are addressable from path notation;
/// encapsulated tools are named `{task}_{index}` and tracked by provenance.
#[derive(Debug, Clone)]
pub struct ToolRegistry {
    task: String,
    tools: BTreeMap<String, Arc<ToolSpec>>,
    order: Vec<String>,
    provenance: BTreeMap<String, Provenance>,
    by_path: BTreeMap<String, String>,
}

impl ToolRegistry {
    pub fn new(task: impl Into<String>) -> Self {
        ToolRegistry {
            task: task.into(),
            tools: BTreeMap::new(),
            order: Vec::new(),
            provenance: BTreeMap::new(),
            by_path: BTreeMap::new(),
        }
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Registers a base tool. Names must be usable in path notation, so a
    /// trailing `_<digits>` is rejected.
    pub fn register(&mut self, spec: ToolSpec) -> Result<Arc<ToolSpec>, RegistryError> {
        let invalid = |reason: &str| RegistryError::InvalidName {
            name: spec.name.clone(),
            reason: reason.into(),
        };
        if spec.name.is_empty() {
            return Err(invalid("empty name"));
        }
        if !spec
            .name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.'))
        {
            return Err(invalid("illegal character"));
        }
        if let Some((_, suffix)) = spec.name.rsplit_once('_') {
            if !suffix.is_empty() && suffix.bytes().all(|b| b.is_ascii_digit()) {
                return Err(invalid("trailing _<digits> is reserved for stack depth"));
            }
        }
        if spec.backend.is_encapsulated() {
            return Err(RegistryError::InvalidBinding {
                name: spec.name.clone(),
                reason: "use encapsulate() for stack paths".into(),
            });
        }
        self.insert(spec)
    }

    fn insert(&mut self, spec: ToolSpec) -> Result<Arc<ToolSpec>, RegistryError> {
        if self.tools.contains_key(&spec.name) {
            return Err(RegistryError::DuplicateName(spec.name));
        }
        spec.backend
            .validate()
            .map_err(|reason| RegistryError::InvalidBinding {
                name: spec.name.clone(),
                reason,
            })?;
        let spec = Arc::new(spec);
        self.order.push(spec.name.clone());
        self.tools.insert(spec.name.clone(), Arc::clone(&spec));
        Ok(spec)
    }

    pub fn get(&self, name: &str) -> Option<&Arc<ToolSpec>> {
        self.tools.get(name)
    }

    pub fn resolve(&self, name: &str) -> Result<&Arc<ToolSpec>, RegistryError> {
        self.get(name)
            .ok_or_else(|| RegistryError::UnknownTool(name.to_string()))
    }

    /// All tools in registration order.
    pub fn tools(&self) -> impl Iterator<Item = &Arc<ToolSpec>> + '_ {
        self.order.iter().map(move |n| &self.tools[n])
    }

    /// Non-encapsulated tools of one category, in registration order.
    pub fn base_tools(&self, kind: ToolKind) -> Vec<Arc<ToolSpec>> {
        self.tools()
            .filter(|t| t.kind == kind && !t.backend.is_encapsulated())
            .cloned()
            .collect()
    }

    pub fn provenance(&self, name: &str) -> Option<&Provenance> {
        self.provenance.get(name)
    }

    pub fn encapsulated(&self) -> impl Iterator<Item = (&Arc<ToolSpec>, &Provenance)> + '_ {
        self.order
            .iter()
            .filter_map(move |n| self.provenance.get(n).map(|p| (&self.tools[n], p)))
    }

    pub fn encapsulation_of(&self, path: &PathExpr) -> Option<&Arc<ToolSpec>> {
        self.by_path.get(&path.serialize()).map(|n| &self.tools[n])
    }

    /// Category of the first base tool in depth-first order.
    pub fn kind_of(&self, path: &PathExpr) -> Result<ToolKind, RegistryError> {
        Ok(self.resolve(path.first_ref().base())?.kind)
    }

    /// Registers `path` as a new tool. Re-encapsulating a path already
    /// present returns `DuplicatePath` carrying the existing spec.
    pub fn encapsulate(
        &mut self,
        path: &PathExpr,
        score: f64,
        budget: Option<ExecutorBudget>,
    ) -> Result<Arc<ToolSpec>, RegistryError> {
        let key = path.serialize();
        if let Some(existing) = self.by_path.get(&key) {
            return Err(RegistryError::DuplicatePath {
                path: key,
                existing: Arc::clone(&self.tools[existing]),
            });
        }
        let kind = self.kind_of(path)?;
        let expansion = Arc::new(expand(path, self)?);
        let name = format!("{}_{}", self.task, self.provenance.len() + 1);
        let description = match expansion.as_ref() {
            ExecutableTool::Agent { tools, .. } => format!("Agent tool with {} sub-tool(s).", tools.len()),
            ExecutableTool::Base(base) => base.description.clone(),
        };
        let spec = ToolSpec::new(
            name.clone(),
            kind,
            description,
            BackendBinding::Encapsulated {
                path: path.clone(),
                budget,
                expansion,
            },
        );
        let spec = self.insert(spec)?;
        self.provenance.insert(
            name.clone(),
            Provenance {
                path: path.clone(),
                score,
            },
        );
        self.by_path.insert(key, name);
        Ok(spec)
    }

    /// Like `encapsulate`, treating an existing encapsulation as success.
    pub fn encapsulate_idempotent(
        &mut self,
        path: &PathExpr,
        score: f64,
        budget: Option<ExecutorBudget>,
    ) -> Result<Arc<ToolSpec>, RegistryError> {
        match self.encapsulate(path, score, budget) {
            Err(RegistryError::DuplicatePath { existing, .. }) => Ok(existing),
            other => other,
        }
    }
}
