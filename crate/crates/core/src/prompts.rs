//! Prompt templates shipped as data files. Placeholders are `{name}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const MOLECULE_DESIGN: &str = include_str!("../prompts/molecule_design.txt");
const CAPTIONING: &str = include_str!("../prompts/captioning.txt");
const REACTION_PREDICTION: &str = include_str!("../prompts/reaction_prediction.txt");
const PROPERTY_PREDICTION: &str = include_str!("../prompts/property_prediction.txt");
const FINAL_REFER: &str = include_str!("../prompts/final_refer.txt");
const REACT: &str = include_str!("../prompts/react.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    MoleculeDesign,
    Captioning,
    ReactionPrediction,
    PropertyPrediction,
    FinalRefer,
}

impl TemplateId {
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::MoleculeDesign => MOLECULE_DESIGN,
            TemplateId::Captioning => CAPTIONING,
            TemplateId::ReactionPrediction => REACTION_PREDICTION,
            TemplateId::PropertyPrediction => PROPERTY_PREDICTION,
            TemplateId::FinalRefer => FINAL_REFER,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::MoleculeDesign => "molecule_design",
            TemplateId::Captioning => "captioning",
            TemplateId::ReactionPrediction => "reaction_prediction",
            TemplateId::PropertyPrediction => "property_prediction",
            TemplateId::FinalRefer => "final_refer",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            TemplateId::MoleculeDesign,
            TemplateId::Captioning,
            TemplateId::ReactionPrediction,
            TemplateId::PropertyPrediction,
            TemplateId::FinalRefer,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| format!("unknown prompt template {s:?}"))
    }
}

/// Substitutes `{key}` placeholders; unknown placeholders are left intact.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// System prompt for a tool-using agent: task instruction plus the ReAct
/// format. `tools` holds `(name, description)` pairs as the policy sees them.
pub fn react_prompt(task: TemplateId, question: &str, tools: &[(&str, &str)]) -> String {
    let listing: Vec<String> = tools.iter().map(|(n, d)| format!("{n}: {d}")).collect();
    let names: Vec<&str> = tools.iter().map(|(n, _)| *n).collect();
    render(
        REACT,
        &[
            ("task_prompt", task.text().trim_end()),
            ("question", question),
            ("tools", &listing.join("\n")),
            ("tool_names", &names.join(", ")),
        ],
    )
}

pub fn final_refer_prompt(question: &str, answers: &[String]) -> String {
    render(FINAL_REFER, &[("question", question), ("answers", &answers.join("\n"))])
}
