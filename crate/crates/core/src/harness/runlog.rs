use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::PathExpr;
use crate::search::{Evaluation, ScoredPath};

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub ts: String,
    pub config_hash: String,
    pub kind: String,
    pub data: serde_json::Value,
}

pub mod kind {
    pub const SCORED_PATH: &str = "scored_path";
    pub const ENCAPSULATED: &str = "encapsulated";
    pub const DISCONTINUED: &str = "discontinued";
    pub const TRACE: &str = "trace";
    pub const PREDICTION: &str = "prediction";
    pub const UNPARSEABLE: &str = "unparseable_answer";
    pub const REPORT: &str = "search_report";
    pub const TRANSCRIPT: &str = "transcript";
}

/// Append-only JSONL log shared across worker threads.
pub struct RunLog {
    path: PathBuf,
    config_hash: String,
    file: Mutex<File>,
}

impl RunLog {
    pub fn open(path: &Path, config_hash: &str) -> Result<Self, RunLogError> {
        let io = |source| RunLogError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(RunLog {
            path: path.to_path_buf(),
            config_hash: config_hash.to_string(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line. Each line is flushed whole so a crash loses at most
    /// the entry being written.
    pub fn append(&self, kind: &str, data: &impl Serialize) -> Result<(), RunLogError> {
        let entry = LogEntry {
            ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            config_hash: self.config_hash.clone(),
            kind: kind.to_string(),
            data: serde_json::to_value(data).map_err(|e| RunLogError::Parse {
                path: self.path.clone(),
                line: 0,
                message: e.to_string(),
            })?,
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| RunLogError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Reads every entry. A truncated final line is skipped.
pub fn read_entries(path: &Path) -> Result<Vec<LogEntry>, RunLogError> {
    let file = File::open(path).map_err(|source| RunLogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| RunLogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(entry) => out.push(entry),
            Err(_) if Some(i) == last => break,
            Err(e) => {
                return Err(RunLogError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Scores recorded under `config_hash`, for seeding a resumed search.
pub fn resume_scores(entries: &[LogEntry], config_hash: &str) -> Vec<(PathExpr, Evaluation)> {
    entries
        .iter()
        .filter(|e| e.kind == kind::SCORED_PATH && e.config_hash == config_hash)
        .filter_map(|e| serde_json::from_value::<ScoredPath>(e.data.clone()).ok())
        .map(|s| {
            (
                s.path,
                Evaluation {
                    score: s.score,
                    items: s.evaluated_items,
                },
            )
        })
        .collect()
}
