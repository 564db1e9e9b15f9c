//! Multi-agent communication baselines: agents A1..AN exchange messages
//! over a fixed graph for a number of rounds, then a final-refer node
//! aggregates.
//!
//! Spatial edges deliver a same-round output from an earlier agent; temporal
//! edges deliver the previous round's output and are inactive in round 1.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{complete, LlmConfig};
use crate::backend::ToolError;
use crate::hash::derive_seed;
use crate::prompts::{final_refer_prompt, TemplateId};
use crate::registry::{BackendBinding, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Chain,
    Random,
    FullConnected,
    Layered,
    Star,
    Debate,
}

impl Structure {
    pub const ALL: [Structure; 6] = [
        Structure::Chain,
        Structure::Random,
        Structure::FullConnected,
        Structure::Layered,
        Structure::Star,
        Structure::Debate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Chain => "chain",
            Structure::Random => "random",
            Structure::FullConnected => "full_connected",
            Structure::Layered => "layered",
            Structure::Star => "star",
            Structure::Debate => "debate",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = TopologyError;
    fn from_str(s: &str) -> Result<Self, TopologyError> {
        Structure::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| TopologyError::InvalidStructure(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("unknown structure {0:?}")]
    InvalidStructure(String),
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("expected {expected} node agents, got {got}")]
    AgentCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    /// 1-based agent index.
    Agent(u32),
    FinalRefer,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Agent(i) => write!(f, "A{i}"),
            NodeId::FinalRefer => f.write_str("final_refer"),
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        if text == "final_refer" {
            return Ok(NodeId::FinalRefer);
        }
        text.strip_prefix('A')
            .and_then(|n| n.parse().ok())
            .map(NodeId::Agent)
            .ok_or_else(|| serde::de::Error::custom(format!("bad node id {text:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub structure: Structure,
    pub num_agents: u32,
    pub rounds: u32,
    pub seed: u64,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

/// Edge `(sender, receiver, round)` as delivered during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub from: NodeId,
    pub to: NodeId,
    pub round: u32,
    pub kind: EdgeKind,
}

impl TopologyGraph {
    pub fn inter_agent_edges(&self) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(|e| e.to != NodeId::FinalRefer)
    }

    pub fn final_refer_edges(&self) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(|e| e.to == NodeId::FinalRefer)
    }

    /// Inter-agent deliveries active in `round`, plus final-refer deliveries
    /// in the last round.
    pub fn schedule(&self, round: u32) -> Vec<Delivery> {
        self.edges
            .iter()
            .filter(|e| match (e.to, e.kind) {
                (NodeId::FinalRefer, _) => round == self.rounds,
                (_, EdgeKind::Spatial) => true,
                (_, EdgeKind::Temporal) => round >= 2,
            })
            .map(|e| Delivery {
                from: e.from,
                to: e.to,
                round,
                kind: e.kind,
            })
            .collect()
    }
}

/// Random structure keeps each ordered pair with probability 1/2, decided
/// by a hash of the seed and the pair so larger graphs extend smaller ones.
fn random_keeps(seed: u64, i: u32, j: u32) -> bool {
    derive_seed(seed, &[&i.to_le_bytes(), &j.to_le_bytes()]) & 1 == 1
}

pub fn build_graph(
    structure: Structure,
    num_agents: u32,
    rounds: u32,
    seed: u64,
) -> Result<TopologyGraph, TopologyError> {
    if rounds == 0 {
        return Err(TopologyError::NoRounds);
    }
    let n = num_agents;
    let mut edges = Vec::new();
    let mut push = |from: u32, to: u32, kind: EdgeKind| {
        edges.push(Edge {
            from: NodeId::Agent(from),
            to: NodeId::Agent(to),
            kind,
        })
    };
    let ordered = |i: u32, j: u32| if i < j { EdgeKind::Spatial } else { EdgeKind::Temporal };
    let senders: Vec<u32> = match structure {
        Structure::Chain => {
            for i in 1..n {
                push(i, i + 1, EdgeKind::Spatial);
            }
            (n >= 1).then_some(n).into_iter().collect()
        }
        Structure::Random => {
            for i in 1..=n {
                for j in (1..=n).filter(|&j| j != i) {
                    if random_keeps(seed, i, j) {
                        push(i, j, ordered(i, j));
                    }
                }
            }
            (1..=n).collect()
        }
        Structure::FullConnected => {
            for i in 1..=n {
                for j in (1..=n).filter(|&j| j != i) {
                    push(i, j, ordered(i, j));
                }
            }
            (1..=n).collect()
        }
        Structure::Layered => {
            let split = n.div_ceil(2);
            for i in 1..=split {
                for j in split + 1..=n {
                    push(i, j, EdgeKind::Spatial);
                }
            }
            if split < n {
                (split + 1..=n).collect()
            } else {
                (1..=n).collect()
            }
        }
        Structure::Star => {
            for leaf in 1..n {
                push(leaf, n, EdgeKind::Spatial);
            }
            for leaf in 1..n {
                push(n, leaf, EdgeKind::Temporal);
            }
            (n >= 1).then_some(n).into_iter().collect()
        }
        Structure::Debate => {
            for i in 1..=n {
                for j in 1..=n {
                    push(i, j, EdgeKind::Temporal);
                }
            }
            (1..=n).collect()
        }
    };
    for s in senders {
        edges.push(Edge {
            from: NodeId::Agent(s),
            to: NodeId::FinalRefer,
            kind: EdgeKind::Spatial,
        });
    }
    let mut nodes: Vec<NodeId> = (1..=n).map(NodeId::Agent).collect();
    nodes.push(NodeId::FinalRefer);
    Ok(TopologyGraph {
        structure,
        num_agents: n,
        rounds,
        seed,
        nodes,
        edges,
    })
}

/// Behavior of one agent node.
#[derive(Debug, Clone)]
pub enum NodeAgent {
    /// Always answers the given text.
    Fixed {
        answer: String,
        latency_ms: u64,
    },
    /// Answers `initial` until it receives messages, then adopts their
    /// most frequent text (ties go to the earliest received).
    MajorityAdopter {
        initial: String,
        latency_ms: u64,
    },
    /// Answers with a tool's output on the question.
    Tool(Arc<ToolSpec>),
    Llm(LlmConfig),
}

impl NodeAgent {
    pub fn fixed(answer: impl Into<String>) -> Self {
        NodeAgent::Fixed {
            answer: answer.into(),
            latency_ms: 0,
        }
    }

    pub fn majority(initial: impl Into<String>) -> Self {
        NodeAgent::MajorityAdopter {
            initial: initial.into(),
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Aggregator {
    Majority,
    LlmFinalRefer(LlmConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMessage {
    pub node: NodeId,
    pub round: u32,
    pub prompt: String,
    pub output: String,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptResult {
    pub structure: Structure,
    pub num_agents: u32,
    pub rounds: u32,
    pub seed: u64,
    pub messages: Vec<NodeMessage>,
    pub final_answer: String,
    pub token_count: u64,
    pub wall_time_ms: u64,
}

/// Token estimate: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn majority_of(messages: &[(NodeId, String)]) -> Option<String> {
    let mut best: Option<(&str, usize)> = None;
    for (_, text) in messages {
        let count = messages.iter().filter(|(_, t)| t == text).count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((text, count));
        }
    }
    best.map(|(t, _)| t.to_string())
}

fn node_prompt(question: &str, received: &[(NodeId, String)]) -> String {
    if received.is_empty() {
        return question.to_string();
    }
    let mut p = format!("{question}\n\nMessages from other agents:");
    for (from, text) in received {
        p.push_str(&format!("\n{from}: {text}"));
    }
    p
}

fn run_node(agent: &NodeAgent, question: &str, prompt: &str, received: &[(NodeId, String)]) -> (String, u64) {
    match agent {
        NodeAgent::Fixed { answer, latency_ms } => (answer.clone(), *latency_ms),
        NodeAgent::MajorityAdopter { initial, latency_ms } => {
            (majority_of(received).unwrap_or_else(|| initial.clone()), *latency_ms)
        }
        NodeAgent::Tool(spec) => {
            let out: Result<String, ToolError> = match &spec.backend {
                BackendBinding::Simulated(sim) => sim.invoke(&spec.name, question, 0),
                BackendBinding::Http(http) => http.invoke(&spec.name, question),
                BackendBinding::Command(cmd) => cmd.invoke(question),
                BackendBinding::Encapsulated { .. } => Err(ToolError::Transport(
                    "encapsulated tools cannot be topology nodes".into(),
                )),
            };
            let latency = match &spec.backend {
                BackendBinding::Simulated(sim) => sim.latency_ms,
                _ => 0,
            };
            (out.unwrap_or_default(), latency)
        }
        NodeAgent::Llm(cfg) => {
            let start = Instant::now();
            let out = complete(cfg, TemplateId::MoleculeDesign.text(), prompt).unwrap_or_default();
            (out, start.elapsed().as_millis() as u64)
        }
    }
}

pub fn simulate(
    graph: &TopologyGraph,
    question: &str,
    agents: &[NodeAgent],
    aggregator: &Aggregator,
) -> Result<TranscriptResult, TopologyError> {
    let n = graph.num_agents as usize;
    if agents.len() != n {
        return Err(TopologyError::AgentCount {
            expected: n,
            got: agents.len(),
        });
    }
    let mut messages = Vec::new();
    let mut wall_time_ms = 0;
    let mut previous: Vec<String> = vec![String::new(); n];
    let mut to_final: Vec<(NodeId, String)> = Vec::new();

    for round in 1..=graph.rounds {
        let schedule = graph.schedule(round);
        let mut current: Vec<Option<String>> = vec![None; n];
        for idx in 0..n {
            let me = NodeId::Agent(idx as u32 + 1);
            let received: Vec<(NodeId, String)> = schedule
                .iter()
                .filter(|d| d.to == me)
                .filter_map(|d| {
                    let NodeId::Agent(from) = d.from else { return None };
                    let from_idx = from as usize - 1;
                    let text = match d.kind {
                        EdgeKind::Spatial => current[from_idx].clone()?,
                        EdgeKind::Temporal => previous[from_idx].clone(),
                    };
                    Some((d.from, text))
                })
                .collect();
            let prompt = node_prompt(question, &received);
            let (output, latency) = run_node(&agents[idx], question, &prompt, &received);
            wall_time_ms += latency;
            let tokens = estimate_tokens(&prompt) + estimate_tokens(&output);
            messages.push(NodeMessage {
                node: me,
                round,
                prompt,
                output: output.clone(),
                tokens,
            });
            current[idx] = Some(output);
        }
        previous = current.into_iter().map(Option::unwrap_or_default).collect();
        if round == graph.rounds {
            to_final = schedule
                .iter()
                .filter(|d| d.to == NodeId::FinalRefer)
                .filter_map(|d| match d.from {
                    NodeId::Agent(i) => Some((d.from, previous[i as usize - 1].clone())),
                    NodeId::FinalRefer => None,
                })
                .collect();
        }
    }

    let answers: Vec<String> = to_final.iter().map(|(from, text)| format!("{from}: {text}")).collect();
    let prompt = final_refer_prompt(question, &answers);
    let final_answer = match aggregator {
        Aggregator::Majority => majority_of(&to_final).unwrap_or_default(),
        Aggregator::LlmFinalRefer(cfg) => {
            let start = Instant::now();
            let out = complete(cfg, &prompt, question).unwrap_or_default();
            wall_time_ms += start.elapsed().as_millis() as u64;
            out
        }
    };
    let tokens = estimate_tokens(&prompt) + estimate_tokens(&final_answer);
    messages.push(NodeMessage {
        node: NodeId::FinalRefer,
        round: graph.rounds,
        prompt,
        output: final_answer.clone(),
        tokens,
    });
    let token_count = messages.iter().map(|m| m.tokens).sum();
    Ok(TranscriptResult {
        structure: graph.structure,
        num_agents: graph.num_agents,
        rounds: graph.rounds,
        seed: graph.seed,
        messages,
        final_answer,
        token_count,
        wall_time_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_of_four() {
        let g = build_graph(Structure::Chain, 4, 1, 0).unwrap();
        let pairs: Vec<String> = g.edges.iter().map(|e| format!("{}>{}", e.from, e.to)).collect();
        assert_eq!(pairs, vec!["A1>A2", "A2>A3", "A3>A4", "A4>final_refer"]);
    }

    #[test]
    fn full_connected_three() {
        let g = build_graph(Structure::FullConnected, 3, 1, 0).unwrap();
        assert_eq!(g.inter_agent_edges().count(), 6);
        assert_eq!(g.final_refer_edges().count(), 3);
    }

    #[test]
    fn zero_agents_is_final_refer_only() {
        let g = build_graph(Structure::Debate, 0, 2, 0).unwrap();
        assert_eq!(g.nodes, vec![NodeId::FinalRefer]);
        assert!(g.edges.is_empty());
        let t = simulate(&g, "q", &[], &Aggregator::Majority).unwrap();
        assert_eq!(t.final_answer, "");
        assert_eq!(t.messages.len(), 1);
    }

    #[test]
    fn unknown_structure() {
        assert_eq!(
            "tree".parse::<Structure>(),
            Err(TopologyError::InvalidStructure("tree".into()))
        );
    }

    #[test]
    fn unanimous_agents() {
        let g = build_graph(Structure::Star, 3, 1, 0).unwrap();
        let agents = vec![NodeAgent::fixed("X"); 3];
        assert_eq!(
            simulate(&g, "q", &agents, &Aggregator::Majority).unwrap().final_answer,
            "X"
        );
    }

    #[test]
    fn debate_converges_to_majority() {
        let g = build_graph(Structure::Debate, 3, 2, 0).unwrap();
        let agents = vec![
            NodeAgent::majority("X"),
            NodeAgent::majority("X"),
            NodeAgent::majority("Y"),
        ];
        let t = simulate(&g, "q", &agents, &Aggregator::Majority).unwrap();
        let round2: Vec<&str> = t
            .messages
            .iter()
            .filter(|m| m.round == 2 && m.node != NodeId::FinalRefer)
            .map(|m| m.output.as_str())
            .collect();
        assert_eq!(round2, vec!["X", "X", "X"]);
        assert_eq!(t.final_answer, "X");
    }

    #[test]
    fn random_is_prefix_consistent() {
        let small = build_graph(Structure::Random, 4, 1, 9).unwrap();
        let large = build_graph(Structure::Random, 6, 1, 9).unwrap();
        for e in small.inter_agent_edges() {
            assert!(large.edges.contains(e));
        }
    }

    #[test]
    fn node_ids_serialize_as_text() {
        assert_eq!(serde_json::to_string(&NodeId::Agent(3)).unwrap(), "\"A3\"");
        assert_eq!(
            serde_json::from_str::<NodeId>("\"final_refer\"").unwrap(),
            NodeId::FinalRefer
        );
    }
}
