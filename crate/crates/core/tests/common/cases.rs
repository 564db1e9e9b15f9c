//! Scripted replays of four observed tool-interplay traces.

use hts_core::agent::{execute, Action, ExecutorBudget, Policy, Trace};
use hts_core::backend::SimulatedBackend;
use hts_core::expand::expand;
use hts_core::path::PathExpr;
use hts_core::registry::{ToolKind, ToolRegistry, ToolSpec};

pub const PEPTIDE_GOLD: &str = "CCC(NC(=O)CCC([NH3+])C(=O)[O-])C(=O)[O-]";
pub const PEPTIDE_NEUTRAL: &str = "CCC(NC(=O)CCC(N)C(=O)O)C(=O)O";
pub const FUCOSE_GOLD: &str = "CC(=O)N[C@@H]1[C@@H](O[C@@H]2O[C@@H](C)[C@@H](O)[C@@H](O)[C@@H]2O)[C@H](O[C@@H]2O[C@H](CO)[C@H](O)[C@H](O)[C@H]2O[C@@H]2O[C@@H](C)[C@@H](O)[C@@H](O)[C@@H]2O)[C@@H](CO)O[C@H]1O";
pub const FUCOSE_OTHER: &str = "Nc1ccn([C@@H]2O[C@H](COP(=O)([O-])[O-])[C@@H](O)[C@H]2O)c(=O)n1";

pub fn tool(name: &str, kind: ToolKind, table: &[(&str, &str)]) -> ToolSpec {
    let backend = SimulatedBackend::new(table.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    ToolSpec::simulated(name, kind, backend)
}

pub fn replay(tools: Vec<ToolSpec>, path: &str, question: &str, actions: Vec<Action>) -> Trace {
    let mut registry = ToolRegistry::new("molecule_design");
    for t in tools {
        registry.register(t).unwrap();
    }
    let tool = expand(&PathExpr::parse(path).unwrap(), &registry).unwrap();
    execute(&tool, question, &Policy::scripted(actions), ExecutorBudget::default()).unwrap()
}

pub fn correct_case() -> (Trace, &'static str) {
    let q =
        "What is the SMILES notation for cyclopropane (a three-carbon cycloalkane used as an inhalation anesthetic)?";
    let trace = replay(
        vec![
            tool("ChemDFM", ToolKind::Compute, &[(q, "CC1(C)CC1")]),
            tool("Name2SMILES", ToolKind::Retrieval, &[("Cyclopropane", "C1CC1")]),
        ],
        "['ChemDFM_0','Name2SMILES_0']",
        q,
        vec![
            Action::invoke("ChemDFM", q),
            Action::invoke("Name2SMILES", "Cyclopropane"),
            Action::finish("C1CC1"),
        ],
    );
    (trace, "C1CC1")
}

pub fn modify_case() -> (Trace, &'static str) {
    let q = "The molecule is a peptide anion that is the conjugate base of gamma-Glu-Abu. Please try to infer the SMILES of this molecule.";
    let edit = format!(
        "Modify the \"{PEPTIDE_GOLD}\" from \"-C(=O)O\" to \"-C(=O)[O-]\" and the amino group from \"-N\" to \"-[NH3+]."
    );
    let trace = replay(
        vec![
            tool(
                "Name2SMILES",
                ToolKind::Retrieval,
                &[("gamma-Glu-Abu", PEPTIDE_NEUTRAL)],
            ),
            tool("ChemDFM", ToolKind::Compute, &[(edit.as_str(), PEPTIDE_GOLD)]),
        ],
        "['Name2SMILES_0','ChemDFM_0']",
        q,
        vec![
            Action::invoke("Name2SMILES", "gamma-Glu-Abu"),
            Action::invoke("ChemDFM", edit.as_str()),
            Action::finish(PEPTIDE_GOLD),
        ],
    );
    (trace, PEPTIDE_GOLD)
}

pub fn judge_case() -> (Trace, &'static str) {
    let q = "The molecule is an alpha-L-Fucp-(1->2)-beta-D-Galp-(1->3)-[alpha-L-Fucp-(1->4)]-D-GlcNAc. Please provide the SMILES of this molecule.";
    let trace = replay(
        vec![
            tool("Molecule_Design_A", ToolKind::Compute, &[(q, FUCOSE_GOLD)]),
            tool("Molecule_Design_B", ToolKind::Compute, &[(q, FUCOSE_OTHER)]),
        ],
        "['Molecule_Design_A_0','Molecule_Design_B_0']",
        q,
        vec![
            Action::invoke("Molecule_Design_A", q),
            Action::invoke("Molecule_Design_B", q),
            Action::finish(FUCOSE_GOLD),
        ],
    );
    (trace, FUCOSE_GOLD)
}

pub fn reserve_case() -> (Trace, &'static str) {
    let q = "The molecule is a linear amino tetrasaccharide. Please try to give SMILES of this molecule.";
    let trace = replay(
        vec![
            tool(
                "Name2SMILES",
                ToolKind::Retrieval,
                &[
                    ("N-acetyl-beta-D-galactosamine", "CC(=O)N[C@@H]1[C@@H](O)[C@@H](O)[C@@H](CO)O[C@H]1O"),
                    ("alpha-D-galactose", "OC[C@H]1O[C@H](O)[C@H](O)[C@@H](O)[C@H]1O"),
                ],
            ),
            tool(
                "ChemDFM",
                ToolKind::Compute,
                &[("What is the SMILES of beta-D-galactose", "OC[C@H]1O[C@@H](O)[C@H](O)[C@@H](O)[C@H]1O")],
            ),
        ],
        "['Name2SMILES_0','ChemDFM_0']",
        q,
        vec![
            Action::invoke("Name2SMILES", "N-acetyl-beta-D-galactosamine"),
            Action::invoke("Name2SMILES", "alpha-D-galactose"),
            Action::invoke("ChemDFM", "What is the SMILES of beta-D-galactose"),
            Action::finish(
                "Unable to provide the exact SMILES string for the described tetrasaccharide due to the complexity of the glycosidic linkages and the limitations of the tools available.",
            ),
        ],
    );
    (trace, "CC(=O)N[C@@H]1[C@@H](O)[C@H](O)[C@@H](CO)O[C@H]1O")
}
