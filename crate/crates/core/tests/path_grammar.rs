use std::sync::Arc;

use hts_core::backend::SimulatedBackend;
use hts_core::expand::{expand, ExecutableTool};
use hts_core::path::PathExpr;
use hts_core::registry::{ToolKind, ToolRegistry, ToolSpec};
use proptest::prelude::*;

/// Reference tree, built and measured without touching the crate.
#[derive(Debug, Clone)]
enum Tree {
    Leaf(String, u32),
    Node(Vec<Tree>),
}

impl Tree {
    fn text(&self) -> String {
        match self {
            Tree::Leaf(name, d) => format!("'{name}_{d}'"),
            Tree::Node(children) => {
                let parts: Vec<String> = children.iter().map(Tree::text).collect();
                format!("[{}]", parts.join(","))
            }
        }
    }

    fn agents(&self) -> u32 {
        match self {
            Tree::Leaf(_, d) => *d,
            Tree::Node(c) if c.len() == 1 => c[0].agents(),
            Tree::Node(c) => 1 + c.iter().map(Tree::agents).sum::<u32>(),
        }
    }

    fn depth(&self) -> u32 {
        match self {
            Tree::Leaf(_, d) => *d,
            Tree::Node(c) if c.len() == 1 => c[0].depth(),
            Tree::Node(c) => 1 + c.iter().map(Tree::depth).max().unwrap(),
        }
    }
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = ("[A-Z][A-Za-z0-9]{0,7}", 0u32..4).prop_map(|(n, d)| Tree::Leaf(n, d));
    leaf.prop_recursive(4, 40, 3, |inner| {
        prop::collection::vec(inner, 1..=3).prop_map(Tree::Node)
    })
}

fn rooted_tree() -> impl Strategy<Value = Tree> {
    prop::collection::vec(tree(), 1..=3).prop_map(Tree::Node)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parse_serialize_round_trip(t in rooted_tree()) {
        let text = t.text();
        let parsed = PathExpr::parse(&text).unwrap();
        prop_assert_eq!(parsed.serialize(), text.clone());
        prop_assert_eq!(PathExpr::parse(&parsed.serialize()).unwrap(), parsed.clone());
        prop_assert_eq!(parsed.agent_count(), t.agents());
        prop_assert_eq!(parsed.depth(), t.depth());
    }

    #[test]
    fn whitespace_and_double_quotes_are_tolerated(t in rooted_tree()) {
        let loose = t.text().replace(',', " , ").replace('\'', "\"");
        prop_assert_eq!(PathExpr::parse(&loose).unwrap().serialize(), t.text());
    }
}

#[test]
fn naming_rule_counts() {
    let table = [
        ("['ChemDFM_2']", 2),
        ("['Name2SMILES_1','ChemDFM_1']", 3),
        ("['Name2SMILES_3','ChemDFM_0']", 4),
        ("[['ChemDFM_0','Name2SMILES_1'],'ChemDFM_1']", 4),
        ("[['ChemDFM_1','Name2SMILES_1'],['ChemDFM_1','Name2SMILES_2']]", 8),
    ];
    for (text, num) in table {
        assert_eq!(PathExpr::parse(text).unwrap().agent_count(), num, "{text}");
    }
}

#[test]
fn canonical_forms() {
    let single = PathExpr::group(vec![PathExpr::tool("Name2SMILES", 0).unwrap()]).unwrap();
    assert_eq!(single.serialize(), "['Name2SMILES_0']");
    assert_eq!(PathExpr::tool("ChemDFM", 2).unwrap().serialize(), "'ChemDFM_2'");
    let nested = PathExpr::parse("[['ChemDFM_0','Name2SMILES_1'],'ChemDFM_1']").unwrap();
    let expected = PathExpr::group(vec![
        PathExpr::group(vec![
            PathExpr::tool("ChemDFM", 0).unwrap(),
            PathExpr::tool("Name2SMILES", 1).unwrap(),
        ])
        .unwrap(),
        PathExpr::tool("ChemDFM", 1).unwrap(),
    ])
    .unwrap();
    assert_eq!(nested, expected);
}

#[test]
fn malformed_inputs() {
    for bad in [
        "[ChemDFM_]",
        "['ChemDFM_']",
        "[]",
        "['A_0'",
        "['A_0',]",
        "['A_0']]",
        "['A_x']",
        "",
    ] {
        assert!(PathExpr::parse(bad).is_err(), "{bad:?} should fail");
    }
    let err = PathExpr::parse("[ChemDFM_]").unwrap_err().to_string();
    assert!(err.contains("byte 9"), "{err}");
}

fn registry() -> ToolRegistry {
    let mut r = ToolRegistry::new("molecule_design");
    for (name, kind) in [("ChemDFM", ToolKind::Compute), ("Name2SMILES", ToolKind::Retrieval)] {
        r.register(ToolSpec::simulated(name, kind, SimulatedBackend::new([])))
            .unwrap();
    }
    r
}

/// Shape of an expansion: `B(name)` or `A[...]`.
fn shape(t: &ExecutableTool) -> String {
    match t {
        ExecutableTool::Base(spec) => format!("B({})", spec.name),
        ExecutableTool::Agent { tools, .. } => {
            let inner: Vec<String> = tools.iter().map(shape).collect();
            format!("A[{}]", inner.join(","))
        }
    }
}

#[test]
fn expansion_shapes() {
    let r = registry();
    let cases = [
        ("['ChemDFM_0']", "B(ChemDFM)"),
        ("'Name2SMILES_1'", "A[B(Name2SMILES)]"),
        ("['ChemDFM_2']", "A[A[B(ChemDFM)]]"),
        (
            "[['ChemDFM_0','Name2SMILES_1'],'ChemDFM_1']",
            "A[A[B(ChemDFM),A[B(Name2SMILES)]],A[B(ChemDFM)]]",
        ),
    ];
    for (text, want) in cases {
        let path = PathExpr::parse(text).unwrap();
        let tool = expand(&path, &r).unwrap();
        assert_eq!(shape(&tool), want, "{text}");
        assert_eq!(tool.agent_count(), path.agent_count());
        assert_eq!(tool.depth(), path.depth());
    }
}

#[test]
fn single_child_group_keeps_backend() {
    let r = registry();
    let ExecutableTool::Base(spec) = expand(&PathExpr::parse("['ChemDFM_0']").unwrap(), &r).unwrap() else {
        panic!("expected the base tool");
    };
    assert!(Arc::ptr_eq(&spec, r.get("ChemDFM").unwrap()));
}

#[test]
fn agents_are_anonymized_by_task() {
    let r = registry();
    let tool = expand(
        &PathExpr::parse("[['ChemDFM_0','Name2SMILES_1'],'ChemDFM_1']").unwrap(),
        &r,
    )
    .unwrap();
    let mut names = Vec::new();
    fn walk(t: &ExecutableTool, out: &mut Vec<String>) {
        if let ExecutableTool::Agent { name, tools, .. } = t {
            out.push(name.clone());
            tools.iter().for_each(|c| walk(c, out));
        }
    }
    walk(&tool, &mut names);
    assert_eq!(names.len(), 4);
    assert!(names.iter().all(|n| n.starts_with("molecule_design_")));
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 4);
}

#[test]
fn unknown_tools_fail_expansion() {
    assert!(expand(&PathExpr::parse("['Missing_0']").unwrap(), &registry()).is_err());
}
