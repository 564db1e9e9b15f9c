//! Hierarchical tool stacking: path notation, tool registry, agent executor,
//! stack-path search, metrics, behavior classification, topology baselines
//! and the run harness.

pub mod agent;
pub mod backend;
pub mod behavior;
pub mod expand;
pub mod hash;
pub mod metrics;
pub mod path;
pub mod prompts;
pub mod registry;
pub mod search;
pub mod smiles;
pub mod topology;

pub mod harness;
