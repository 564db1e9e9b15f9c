//! Bounded tool-stacking executor.
//!
//! Each policy turn uses one iteration of the agent's `max_iter`. Nested
//! agents run their own loop one level down and return their final answer
//! as the parent's observation. Steps from all levels go into one flat list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{post_json, ToolError};
use crate::expand::ExecutableTool;
use crate::metrics::MetricId;
use crate::prompts::{react_prompt, TemplateId};
use crate::registry::BackendBinding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorBudget {
    pub max_iter: u32,
    pub global_call_cap: u32,
}

impl Default for ExecutorBudget {
    fn default() -> Self {
        ExecutorBudget {
            max_iter: 8,
            global_call_cap: 64,
        }
    }
}

impl ExecutorBudget {
    pub fn new(max_iter: u32, global_call_cap: u32) -> Result<Self, AgentError> {
        let b = ExecutorBudget {
            max_iter,
            global_call_cap,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_iter == 0 {
            return Err(AgentError::InvalidBudget("max_iter must be at least 1".into()));
        }
        if self.global_call_cap < self.max_iter {
            return Err(AgentError::InvalidBudget(
                "global_call_cap must be at least max_iter".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Invoke { tool: String, input: String },
    Finish { answer: String },
}

impl Action {
    pub fn invoke(tool: impl Into<String>, input: impl Into<String>) -> Self {
        Action::Invoke {
            tool: tool.into(),
            input: input.into(),
        }
    }

    pub fn finish(answer: impl Into<String>) -> Self {
        Action::Finish { answer: answer.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub agent: String,
    pub level: u32,
    pub thought: String,
    pub action: Action,
    pub observation: String,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finish,
    MaxIter,
    Budget,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub input: String,
    pub steps: Vec<Step>,
    pub final_answer: String,
    pub tool_calls: u32,
    pub base_calls: u32,
    pub terminated_by: Termination,
}

/// One tool invocation as seen from a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invocation<'a> {
    pub tool: &'a str,
    pub input: &'a str,
    pub output: &'a str,
    pub failed: bool,
}

impl Trace {
    pub fn invocations(&self, level: u32) -> Vec<Invocation<'_>> {
        self.steps
            .iter()
            .filter(|s| s.level == level)
            .filter_map(|s| match &s.action {
                Action::Invoke { tool, input } => Some(Invocation {
                    tool,
                    input,
                    output: &s.observation,
                    failed: s.failed,
                }),
                Action::Finish { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub template: TemplateId,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_llm_timeout")]
    pub timeout_ms: u64,
}

fn default_llm_timeout() -> u64 {
    60_000
}

/// Selection policy.
///
/// Scripted actions may use `{input}` (the agent's input) and
/// `{observation}` (the latest successful observation), and `#N` as a tool
/// name selects the N-th tool of the current toolset. Nested agents follow
/// `nested`, or relay their input to their first tool when it is empty.
///
/// Greedy tries every tool once and finishes with the observation that
/// scores best against `gold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Scripted {
        actions: Vec<Action>,
        #[serde(default)]
        nested: Vec<Action>,
    },
    Greedy {
        metric: MetricId,
        gold: String,
    },
    LlmHttp(LlmConfig),
}

impl Policy {
    pub fn scripted(actions: Vec<Action>) -> Self {
        Policy::Scripted {
            actions,
            nested: Vec::new(),
        }
    }

    pub fn greedy(metric: MetricId, gold: impl Into<String>) -> Self {
        Policy::Greedy {
            metric,
            gold: gold.into(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        match self {
            Policy::Scripted { actions, nested } => {
                let ends_with_finish = |a: &[Action]| matches!(a.last(), Some(Action::Finish { .. }));
                if !ends_with_finish(actions) || !(nested.is_empty() || ends_with_finish(nested)) {
                    return Err(AgentError::InvalidPolicy(
                        "scripted actions must end with a finish".into(),
                    ));
                }
                Ok(())
            }
            Policy::Greedy { .. } => Ok(()),
            Policy::LlmHttp(cfg) if !(0.0..=2.0).contains(&cfg.temperature) => Err(AgentError::InvalidPolicy(format!(
                "temperature {} outside [0, 2]",
                cfg.temperature
            ))),
            Policy::LlmHttp(_) => Ok(()),
        }
    }

    fn for_nested(&self) -> Policy {
        match self {
            Policy::Scripted { nested, .. } => Policy::Scripted {
                actions: if nested.is_empty() {
                    relay_script()
                } else {
                    nested.clone()
                },
                nested: nested.clone(),
            },
            other => other.clone(),
        }
    }
}

fn relay_script() -> Vec<Action> {
    vec![Action::invoke("#0", "{input}"), Action::finish("{observation}")]
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AgentError {
    #[error("toolset is empty")]
    EmptyToolset,
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("unparseable policy output: {0:?}")]
    Unparseable(String),
    #[error("policy endpoint failed: {0}")]
    Endpoint(String),
}

fn starts_with_ci(line: &str, marker: &str) -> bool {
    line.len() >= marker.len()
        && line.is_char_boundary(marker.len())
        && line[..marker.len()].eq_ignore_ascii_case(marker)
}

const MARKERS: [&str; 5] = ["thought:", "action:", "action input:", "observation:", "final answer:"];

fn is_marker(line: &str) -> bool {
    MARKERS.iter().any(|m| starts_with_ci(line, m))
}

/// Reads an `Action:`/`Action Input:` pair or a `Final Answer:` line,
/// whichever comes first.
pub fn parse_react(text: &str) -> Result<Action, PolicyError> {
    let lines: Vec<&str> = text.lines().map(str::trim_start).collect();
    for (i, line) in lines.iter().enumerate() {
        if starts_with_ci(line, "final answer:") {
            let mut answer = line["final answer:".len()..].to_string();
            for rest in &lines[i + 1..] {
                answer.push('\n');
                answer.push_str(rest);
            }
            return Ok(Action::finish(answer.trim()));
        }
        if starts_with_ci(line, "action:") {
            let tool = line["action:".len()..]
                .trim()
                .trim_matches(|c| matches!(c, '`' | '"' | '\'' | '[' | ']'))
                .to_string();
            let Some(j) = lines[i + 1..].iter().position(|l| starts_with_ci(l, "action input:")) else {
                break;
            };
            let j = i + 1 + j;
            let mut input = lines[j]["action input:".len()..].trim().to_string();
            for rest in lines[j + 1..].iter().take_while(|l| !is_marker(l)) {
                input.push('\n');
                input.push_str(rest);
            }
            if tool.is_empty() {
                break;
            }
            return Ok(Action::invoke(tool, input.trim()));
        }
    }
    Err(PolicyError::Unparseable(text.chars().take(200).collect()))
}

fn extract_thought(text: &str) -> String {
    text.lines()
        .map(str::trim_start)
        .find(|l| starts_with_ci(l, "thought:"))
        .map(|l| l["thought:".len()..].trim().to_string())
        .unwrap_or_default()
}

const FORMAT_REMINDER: &str =
    "Format reminder: reply with an \"Action:\" line and an \"Action Input:\" line, or with a \"Final Answer:\" line.";
const REPROMPTS: usize = 2;

#[derive(Debug, Clone)]
struct Observed {
    output: String,
    failed: bool,
}

struct TurnContext<'a> {
    input: &'a str,
    tools: &'a [ExecutableTool],
    history: &'a [Observed],
}

impl TurnContext<'_> {
    fn last_success(&self) -> Option<&str> {
        self.history.iter().rev().find(|o| !o.failed).map(|o| o.output.as_str())
    }
}

enum Session<'p> {
    Scripted {
        actions: &'p [Action],
        next: usize,
    },
    Greedy {
        metric: &'p MetricId,
        gold: &'p str,
        next: usize,
    },
    Llm {
        cfg: &'p LlmConfig,
        messages: Vec<serde_json::Value>,
        seen: usize,
    },
}

impl<'p> Session<'p> {
    fn new(policy: &'p Policy) -> Self {
        match policy {
            Policy::Scripted { actions, .. } => Session::Scripted { actions, next: 0 },
            Policy::Greedy { metric, gold } => Session::Greedy { metric, gold, next: 0 },
            Policy::LlmHttp(cfg) => Session::Llm {
                cfg,
                messages: Vec::new(),
                seen: 0,
            },
        }
    }

    fn next(&mut self, ctx: &TurnContext<'_>) -> Result<(String, Action), PolicyError> {
        match self {
            Session::Scripted { actions, next } => {
                let Some(action) = actions.get(*next) else {
                    return Ok((String::new(), Action::finish(ctx.last_success().unwrap_or_default())));
                };
                *next += 1;
                Ok((String::new(), instantiate(action, ctx)))
            }
            Session::Greedy { metric, gold, next } => {
                if let Some(tool) = ctx.tools.get(*next) {
                    *next += 1;
                    return Ok((format!("Try {}.", tool.name()), Action::invoke(tool.name(), ctx.input)));
                }
                let mut best: Option<(&str, f64)> = None;
                for o in ctx.history.iter().filter(|o| !o.failed) {
                    let s = metric.score(&o.output, gold);
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((&o.output, s));
                    }
                }
                let answer = best.map(|(o, _)| o).unwrap_or_default();
                Ok(("Pick the best observation.".into(), Action::finish(answer)))
            }
            Session::Llm { cfg, messages, seen } => {
                if messages.is_empty() {
                    let listing: Vec<(&str, &str)> = ctx.tools.iter().map(|t| (t.name(), t.description())).collect();
                    messages.push(message("system", &react_prompt(cfg.template, ctx.input, &listing)));
                    messages.push(message("user", ctx.input));
                }
                for o in &ctx.history[*seen..] {
                    messages.push(message("user", &format!("Observation: {}", o.output)));
                }
                *seen = ctx.history.len();
                for attempt in 0..=REPROMPTS {
                    let reply = chat(cfg, messages)?;
                    messages.push(message("assistant", &reply));
                    match parse_react(&reply) {
                        Ok(action) => return Ok((extract_thought(&reply), action)),
                        Err(e) if attempt == REPROMPTS => return Err(e),
                        Err(_) => messages.push(message("user", FORMAT_REMINDER)),
                    }
                }
                unreachable!("loop returns on the last attempt")
            }
        }
    }
}

fn instantiate(action: &Action, ctx: &TurnContext<'_>) -> Action {
    let fill = |s: &str| {
        s.replace("{input}", ctx.input)
            .replace("{observation}", ctx.last_success().unwrap_or_default())
    };
    match action {
        Action::Invoke { tool, input } => {
            let tool = match tool.strip_prefix('#').and_then(|n| n.parse::<usize>().ok()) {
                Some(i) => ctx
                    .tools
                    .get(i)
                    .map(|t| t.name().to_string())
                    .unwrap_or_else(|| tool.clone()),
                None => tool.clone(),
            };
            Action::invoke(tool, fill(input))
        }
        Action::Finish { answer } => Action::finish(fill(answer)),
    }
}

fn message(role: &str, content: &str) -> serde_json::Value {
    serde_json::json!({ "role": role, "content": content })
}

/// One chat-completions round trip.
fn chat(cfg: &LlmConfig, messages: &[serde_json::Value]) -> Result<String, PolicyError> {
    let body = serde_json::json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
    });
    let reply = post_json(&cfg.endpoint, &body, cfg.timeout_ms).map_err(|e| PolicyError::Endpoint(e.to_string()))?;
    reply["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| PolicyError::Endpoint("reply has no choices[0].message.content".into()))
}

/// Public entry to a single chat call, used by topology aggregators.
pub fn complete(cfg: &LlmConfig, system: &str, user: &str) -> Result<String, PolicyError> {
    chat(cfg, &[message("system", system), message("user", user)])
}

/// Raised through every level when the global call cap is hit. Carries the
/// aborting level's current output.
struct BudgetAbort(String);

struct Outcome {
    final_answer: String,
    terminated_by: Termination,
}

struct Run {
    budget: ExecutorBudget,
    calls: u64,
    base_calls: u32,
    steps: Vec<Step>,
}

impl Run {
    fn agent_loop(
        &mut self,
        name: &str,
        input: &str,
        tools: &[ExecutableTool],
        policy: &Policy,
        level: u32,
        max_iter: u32,
    ) -> Result<Outcome, BudgetAbort> {
        let nested = policy.for_nested();
        let mut session = Session::new(policy);
        let mut history: Vec<Observed> = Vec::new();
        let current = |h: &[Observed]| {
            h.iter()
                .rev()
                .find(|o| !o.failed)
                .map_or_else(|| input.to_string(), |o| o.output.clone())
        };

        for _ in 0..max_iter {
            let ctx = TurnContext {
                input,
                tools,
                history: &history,
            };
            let (thought, action) = match session.next(&ctx) {
                Ok(turn) => turn,
                Err(_) => {
                    return Ok(Outcome {
                        final_answer: ctx.last_success().unwrap_or_default().to_string(),
                        terminated_by: Termination::Error,
                    })
                }
            };
            let idx = self.steps.len();
            self.steps.push(Step {
                agent: name.to_string(),
                level,
                thought,
                action: action.clone(),
                observation: String::new(),
                failed: false,
            });
            match action {
                Action::Finish { answer } => {
                    return Ok(Outcome {
                        final_answer: answer,
                        terminated_by: Termination::Finish,
                    })
                }
                Action::Invoke {
                    tool,
                    input: tool_input,
                } => {
                    let result = match tools.iter().find(|t| t.name() == tool) {
                        Some(t) => self.invoke(t, &tool_input, &nested, level, max_iter),
                        None => Ok(Err(ToolError::UnknownTool(tool.clone()))),
                    };
                    match result {
                        Ok(Ok(out)) => {
                            self.steps[idx].observation = out.clone();
                            history.push(Observed {
                                output: out,
                                failed: false,
                            });
                        }
                        Ok(Err(e)) => {
                            self.steps[idx].observation = e.to_string();
                            self.steps[idx].failed = true;
                            history.push(Observed {
                                output: e.to_string(),
                                failed: true,
                            });
                        }
                        Err(BudgetAbort(partial)) => {
                            self.steps[idx].observation = partial;
                            self.steps[idx].failed = true;
                            return Err(BudgetAbort(current(&history)));
                        }
                    }
                }
            }
        }
        Ok(Outcome {
            final_answer: current(&history),
            terminated_by: Termination::MaxIter,
        })
    }

    fn invoke(
        &mut self,
        tool: &ExecutableTool,
        input: &str,
        policy: &Policy,
        level: u32,
        max_iter: u32,
    ) -> Result<Result<String, ToolError>, BudgetAbort> {
        let call_index = self.calls;
        self.calls += 1;
        match tool {
            ExecutableTool::Agent { name, tools, .. } => {
                let outcome = self.agent_loop(name, input, tools, policy, level + 1, max_iter)?;
                Ok(Ok(outcome.final_answer))
            }
            ExecutableTool::Base(spec) => match &spec.backend {
                BackendBinding::Encapsulated { expansion, budget, .. } => {
                    let inner_iter = budget.map_or(max_iter, |b| b.max_iter);
                    match expansion.as_ref() {
                        ExecutableTool::Agent { name, tools, .. } => {
                            let outcome = self.agent_loop(name, input, tools, policy, level + 1, inner_iter)?;
                            Ok(Ok(outcome.final_answer))
                        }
                        base => self.invoke(base, input, policy, level, inner_iter),
                    }
                }
                backend => {
                    if self.base_calls >= self.budget.global_call_cap {
                        return Err(BudgetAbort(input.to_string()));
                    }
                    self.base_calls += 1;
                    Ok(match backend {
                        BackendBinding::Simulated(sim) => sim.invoke(&spec.name, input, call_index),
                        BackendBinding::Http(http) => http.invoke(&spec.name, input),
                        BackendBinding::Command(cmd) => cmd.invoke(input),
                        BackendBinding::Encapsulated { .. } => unreachable!("handled above"),
                    })
                }
            },
        }
    }

    fn into_trace(self, input: &str, outcome: Outcome) -> Trace {
        let tool_calls = self
            .steps
            .iter()
            .filter(|s| matches!(s.action, Action::Invoke { .. }))
            .count() as u32;
        Trace {
            input: input.to_string(),
            steps: self.steps,
            final_answer: outcome.final_answer,
            tool_calls,
            base_calls: self.base_calls,
            terminated_by: outcome.terminated_by,
        }
    }
}

pub const MAIN_AGENT: &str = "main";

/// Runs a top-level agent named `main` over `toolset`.
pub fn run_agent(
    input: &str,
    toolset: &[ExecutableTool],
    policy: &Policy,
    budget: ExecutorBudget,
) -> Result<Trace, AgentError> {
    run_named(MAIN_AGENT, input, toolset, policy, budget)
}

fn run_named(
    name: &str,
    input: &str,
    toolset: &[ExecutableTool],
    policy: &Policy,
    budget: ExecutorBudget,
) -> Result<Trace, AgentError> {
    if toolset.is_empty() {
        return Err(AgentError::EmptyToolset);
    }
    budget.validate()?;
    policy.validate()?;
    let mut run = Run {
        budget,
        calls: 0,
        base_calls: 0,
        steps: Vec::new(),
    };
    let outcome = match run.agent_loop(name, input, toolset, policy, 0, budget.max_iter) {
        Ok(o) => o,
        Err(BudgetAbort(current)) => Outcome {
            final_answer: current,
            terminated_by: Termination::Budget,
        },
    };
    Ok(run.into_trace(input, outcome))
}

/// Runs an expanded path. An agent expansion is the top-level agent itself;
/// a bare tool is invoked once directly.
pub fn execute(
    tool: &ExecutableTool,
    input: &str,
    policy: &Policy,
    budget: ExecutorBudget,
) -> Result<Trace, AgentError> {
    match tool {
        ExecutableTool::Agent { name, tools, .. } => run_named(name, input, tools, policy, budget),
        base => {
            budget.validate()?;
            policy.validate()?;
            let mut run = Run {
                budget,
                calls: 0,
                base_calls: 0,
                steps: Vec::new(),
            };
            run.steps.push(Step {
                agent: MAIN_AGENT.into(),
                level: 0,
                thought: String::new(),
                action: Action::invoke(base.name(), input),
                observation: String::new(),
                failed: false,
            });
            let outcome = match run.invoke(base, input, &policy.for_nested(), 0, budget.max_iter) {
                Ok(Ok(out)) => {
                    run.steps[0].observation = out.clone();
                    Outcome {
                        final_answer: out,
                        terminated_by: Termination::MaxIter,
                    }
                }
                Ok(Err(e)) => {
                    run.steps[0].observation = e.to_string();
                    run.steps[0].failed = true;
                    Outcome {
                        final_answer: input.to_string(),
                        terminated_by: Termination::MaxIter,
                    }
                }
                Err(BudgetAbort(current)) => {
                    run.steps[0].failed = true;
                    Outcome {
                        final_answer: current,
                        terminated_by: Termination::Budget,
                    }
                }
            };
            Ok(run.into_trace(input, outcome))
        }
    }
}
