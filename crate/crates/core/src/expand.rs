use std::sync::Arc;

use crate::path::{PathExpr, ToolRef};
use crate::registry::{RegistryError, ToolRegistry, ToolSpec};

/// A path resolved against a registry: either a backend tool or an agent
/// holding a toolset. Agent names are anonymized as `{task}_{num}`.
#[derive(Debug, Clone)]
pub enum ExecutableTool {
    Base(Arc<ToolSpec>),
    Agent {
        name: String,
        description: String,
        tools: Vec<ExecutableTool>,
    },
}

impl ExecutableTool {
    pub fn name(&self) -> &str {
        match self {
            ExecutableTool::Base(spec) => &spec.name,
            ExecutableTool::Agent { name, .. } => name,
        }
    }

    pub fn description(&self) -> &str {
        match self {
            ExecutableTool::Base(spec) => &spec.description,
            ExecutableTool::Agent { description, .. } => description,
        }
    }

    /// Nesting depth of agent loops.
    pub fn depth(&self) -> u32 {
        match self {
            ExecutableTool::Base(_) => 0,
            ExecutableTool::Agent { tools, .. } => 1 + tools.iter().map(ExecutableTool::depth).max().unwrap_or(0),
        }
    }

    pub fn agent_count(&self) -> u32 {
        match self {
            ExecutableTool::Base(_) => 0,
            ExecutableTool::Agent { tools, .. } => 1 + tools.iter().map(ExecutableTool::agent_count).sum::<u32>(),
        }
    }
}

pub fn expand(path: &PathExpr, registry: &ToolRegistry) -> Result<ExecutableTool, RegistryError> {
    let mut counter = 0;
    expand_inner(path, registry, &mut counter)
}

fn agent(registry: &ToolRegistry, counter: &mut u32, tools: Vec<ExecutableTool>) -> ExecutableTool {
    *counter += 1;
    ExecutableTool::Agent {
        name: format!("{}_{}", registry.task(), counter),
        description: format!(
            "Agent tool with {} sub-tool(s). Give it the full question.",
            tools.len()
        ),
        tools,
    }
}

fn expand_ref(r: &ToolRef, registry: &ToolRegistry, counter: &mut u32) -> Result<ExecutableTool, RegistryError> {
    let mut tool = ExecutableTool::Base(Arc::clone(registry.resolve(r.base())?));
    for _ in 0..r.self_depth() {
        tool = agent(registry, counter, vec![tool]);
    }
    Ok(tool)
}

fn expand_inner(path: &PathExpr, registry: &ToolRegistry, counter: &mut u32) -> Result<ExecutableTool, RegistryError> {
    match path {
        PathExpr::Tool(r) => expand_ref(r, registry, counter),
        PathExpr::Group(children) if children.len() == 1 => expand_inner(&children[0], registry, counter),
        PathExpr::Group(children) => {
            let tools = children
                .iter()
                .map(|c| expand_inner(c, registry, counter))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(agent(registry, counter, tools))
        }
    }
}
