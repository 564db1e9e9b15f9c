use hts_core::topology::{
    build_graph, estimate_tokens, simulate, Aggregator, EdgeKind, NodeAgent, NodeId, Structure, TopologyGraph,
};

fn agents(n: u32) -> Vec<NodeAgent> {
    (0..n).map(|i| NodeAgent::majority(format!("ans{}", i % 3))).collect()
}

fn expected_inter_edges(s: Structure, n: usize) -> Option<usize> {
    match s {
        Structure::Chain => Some(n.saturating_sub(1)),
        Structure::FullConnected => Some(n * n.saturating_sub(1)),
        Structure::Layered => Some(n.div_ceil(2) * (n - n.div_ceil(2))),
        Structure::Star => Some(2 * n.saturating_sub(1)),
        Structure::Debate => Some(n * n),
        Structure::Random => None,
    }
}

#[test]
fn edge_counts_for_all_structures() {
    for n in 1..=16u32 {
        for s in Structure::ALL {
            let g = build_graph(s, n, 2, 11).unwrap();
            let inter = g.inter_agent_edges().count();
            match expected_inter_edges(s, n as usize) {
                Some(want) => assert_eq!(inter, want, "{s} n={n}"),
                None => assert!(inter <= (n * (n - 1)) as usize),
            }
            assert!(g.final_refer_edges().count() >= 1, "{s} n={n}");
            assert!(g.edges.iter().all(|e| e.from != NodeId::FinalRefer));
            assert_eq!(g.nodes.len(), n as usize + 1);
        }
    }
}

#[test]
fn no_agents_leaves_only_the_aggregator() {
    for s in Structure::ALL {
        let g = build_graph(s, 0, 1, 0).unwrap();
        assert_eq!(g.nodes, vec![NodeId::FinalRefer]);
        assert!(g.edges.is_empty());
    }
}

#[test]
fn random_graphs_depend_only_on_seed() {
    let a = build_graph(Structure::Random, 8, 1, 5).unwrap();
    assert_eq!(a, build_graph(Structure::Random, 8, 1, 5).unwrap());
    let seeds_differ = (0..8).any(|s| build_graph(Structure::Random, 8, 1, s).unwrap().edges != a.edges);
    assert!(seeds_differ);
}

#[test]
fn temporal_edges_wait_for_round_two() {
    let g = build_graph(Structure::Debate, 3, 3, 0).unwrap();
    assert!(g.schedule(1).iter().all(|d| d.kind == EdgeKind::Spatial));
    assert_eq!(g.schedule(2).iter().filter(|d| d.kind == EdgeKind::Temporal).count(), 9);
    assert!(g.schedule(2).iter().all(|d| d.to != NodeId::FinalRefer));
    assert_eq!(g.schedule(3).iter().filter(|d| d.to == NodeId::FinalRefer).count(), 3);
}

#[test]
fn transcripts_are_deterministic_and_tokens_grow_with_size() {
    for s in Structure::ALL {
        let mut last = 0;
        for n in [2u32, 4, 8] {
            let g = build_graph(s, n, 2, 3).unwrap();
            let run = || {
                let mut t = simulate(&g, "Design a molecule.", &agents(n), &Aggregator::Majority).unwrap();
                t.wall_time_ms = 0;
                serde_json::to_string(&t).unwrap()
            };
            let first = run();
            assert_eq!(first, run(), "{s} n={n}");
            let tokens = simulate(&g, "Design a molecule.", &agents(n), &Aggregator::Majority)
                .unwrap()
                .token_count;
            assert!(tokens > last, "{s} n={n}: {tokens} <= {last}");
            last = tokens;
        }
    }
}

#[test]
fn debate_majority_wins() {
    let g = build_graph(Structure::Debate, 3, 2, 0).unwrap();
    let nodes = vec![
        NodeAgent::majority("X"),
        NodeAgent::majority("X"),
        NodeAgent::majority("Y"),
    ];
    assert_eq!(
        simulate(&g, "q", &nodes, &Aggregator::Majority).unwrap().final_answer,
        "X"
    );
}

/// Recomputes the token total from the graph without looking at prompts the
/// simulator built.
fn token_oracle(g: &TopologyGraph, question: &str, answers: &[&str]) -> u64 {
    let name = |i: u32| format!("A{i}");
    let mut total = 0;
    for round in 1..=g.rounds {
        for to in 1..=g.num_agents {
            let incoming: Vec<u32> = g
                .schedule(round)
                .iter()
                .filter(|d| d.to == NodeId::Agent(to))
                .map(|d| match d.from {
                    NodeId::Agent(i) => i,
                    NodeId::FinalRefer => unreachable!(),
                })
                .collect();
            let prompt = if incoming.is_empty() {
                question.to_string()
            } else {
                let lines: String = incoming
                    .iter()
                    .map(|i| format!("\n{}: {}", name(*i), answers[*i as usize - 1]))
                    .collect();
                format!("{question}\n\nMessages from other agents:{lines}")
            };
            total += estimate_tokens(&prompt) + estimate_tokens(answers[to as usize - 1]);
        }
    }
    total
}

#[test]
fn token_accounting_matches_oracle() {
    let answers = ["CCO", "C1CC1", "CCN", "O"];
    let nodes: Vec<NodeAgent> = answers.iter().map(|a| NodeAgent::fixed(*a)).collect();
    for s in Structure::ALL {
        let g = build_graph(s, 4, 2, 9).unwrap();
        let t = simulate(&g, "Design a small molecule.", &nodes, &Aggregator::Majority).unwrap();
        let final_msg = t.messages.last().unwrap();
        assert_eq!(final_msg.node, NodeId::FinalRefer);
        let want = token_oracle(&g, "Design a small molecule.", &answers) + final_msg.tokens;
        assert_eq!(t.token_count, want, "{s}");
        assert_eq!(
            final_msg.tokens,
            estimate_tokens(&final_msg.prompt) + estimate_tokens(&t.final_answer)
        );
    }
}

#[test]
fn token_estimate_rounds_up() {
    assert_eq!(estimate_tokens(""), 0);
    assert_eq!(estimate_tokens("abcd"), 1);
    assert_eq!(estimate_tokens("abcde"), 2);
}
