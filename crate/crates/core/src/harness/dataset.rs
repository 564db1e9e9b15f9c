use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    #[default]
    Generation,
    Classification,
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Generation => "generation",
            Schema::Classification => "classification",
        })
    }
}

impl FromStr for Schema {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "generation" => Ok(Schema::Generation),
            "classification" => Ok(Schema::Classification),
            other => Err(format!("unknown dataset schema {other:?}")),
        }
    }
}

/// One dataset item. For classification items `gold` holds the label as
/// `"0"` or `"1"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub input: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl Record {
    pub fn new(id: impl Into<String>, input: impl Into<String>, gold: impl Into<String>) -> Self {
        Record {
            id: id.into(),
            input: input.into(),
            gold: gold.into(),
            label: None,
            group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps the first `n` records.
    pub fn truncate(&mut self, n: usize) {
        self.records.truncate(n);
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: serde_json::Value,
    input: String,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    label: Option<serde_json::Value>,
    #[serde(default)]
    group: Option<String>,
}

pub fn load_dataset(path: &Path, schema: Schema) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, schema)
}

pub fn parse_dataset(text: &str, schema: Schema) -> Result<Dataset, DatasetError> {
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Schema { line, message };
        let raw: RawRecord = serde_json::from_str(raw_line).map_err(|e| err(e.to_string()))?;
        let id = match raw.id {
            serde_json::Value::String(s) if !s.is_empty() => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(err(format!("id must be a non-empty string or a number, got {other}"))),
        };
        if !ids.insert(id.clone()) {
            return Err(err(format!("duplicate id {id:?}")));
        }
        let (gold, label) = match schema {
            Schema::Generation => match (raw.gold, raw.label) {
                (Some(g), None) => (g, None),
                (None, _) => return Err(err("generation records need \"gold\"".into())),
                (Some(_), Some(_)) => return Err(err("generation records take \"gold\", not \"label\"".into())),
            },
            Schema::Classification => {
                let label = match raw.label {
                    Some(serde_json::Value::Number(n)) if n.as_u64() == Some(0) || n.as_u64() == Some(1) => {
                        n.as_u64().unwrap() as u8
                    }
                    Some(other) => return Err(err(format!("label must be 0 or 1, got {other}"))),
                    None => return Err(err("classification records need \"label\"".into())),
                };
                (label.to_string(), Some(label))
            }
        };
        records.push(Record {
            id,
            input: raw.input,
            gold,
            label,
            group: raw.group,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(Dataset { schema, records })
}
