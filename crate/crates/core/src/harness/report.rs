use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::config::TaskType;
use crate::harness::runlog::{kind, LogEntry};
use crate::metrics::{bleu, levenshtein, rouge, Fingerprinter, MetricId, RougeVariant, Tokenizer};
use crate::search::SearchReport;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run log holds no predictions")]
    EmptyLog,
    #[error("malformed prediction entry: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One evaluated item, as logged by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub path: String,
    pub id: String,
    pub input: String,
    pub gold: String,
    /// `None` when the run failed.
    pub prediction: Option<String>,
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub path: String,
    pub items: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("path,items,{}\n", self.columns.join(","));
        for row in &self.rows {
            let vals: Vec<String> = row.values.iter().map(|v| format!("{v:.4}")).collect();
            s.push_str(&format!(
                "\"{}\",{},{}\n",
                row.path.replace('"', "\"\""),
                row.items,
                vals.join(",")
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["path".to_string(), "items".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut cells = vec![header];
        for row in &self.rows {
            let mut line = vec![row.path.clone(), row.items.to_string()];
            line.extend(row.values.iter().map(|v| format!("{v:.4}")));
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for r in cells {
            let padded: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            s.push_str(padded.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

fn mean(items: &[&Prediction], f: impl Fn(&str, &str) -> f64) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items
        .iter()
        .map(|p| {
            p.prediction
                .as_deref()
                .map_or(0.0, |pred| f(pred.trim(), p.gold.trim()))
        })
        .sum::<f64>()
        / items.len() as f64
}

fn generation_columns() -> Vec<String> {
    [
        "Exact",
        "BLEU",
        "Dis",
        "Validity",
        "MACCS-like FTS",
        "RDK-like FTS",
        "Morgan-like FTS",
    ]
    .map(String::from)
    .to_vec()
}

fn generation_values(items: &[&Prediction]) -> Vec<f64> {
    let mut v = vec![
        mean(items, |p, g| MetricId::Exact.score(p, g)),
        mean(items, |p, g| bleu(p, &[g], 2, Tokenizer::Char, false)),
        // A failed run counts as the full length of the gold string.
        items
            .iter()
            .map(|p| levenshtein(p.prediction.as_deref().unwrap_or("").trim(), p.gold.trim()) as f64)
            .sum::<f64>()
            / items.len().max(1) as f64,
        mean(items, |p, g| MetricId::Validity.score(p, g)),
    ];
    v.extend(Fingerprinter::ALL.map(|f| mean(items, |p, g| MetricId::Tanimoto(f).score(p, g))));
    v
}

fn caption_columns() -> Vec<String> {
    ["BLEU-2", "BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L"]
        .map(String::from)
        .to_vec()
}

fn caption_values(items: &[&Prediction]) -> Vec<f64> {
    vec![
        mean(items, |p, g| bleu(p, &[g], 2, Tokenizer::Whitespace, false)),
        mean(items, |p, g| bleu(p, &[g], 4, Tokenizer::Whitespace, false)),
        mean(items, |p, g| rouge(p, g, RougeVariant::One)),
        mean(items, |p, g| rouge(p, g, RougeVariant::Two)),
        mean(items, |p, g| rouge(p, g, RougeVariant::L)),
    ]
}

fn group_name(p: &Prediction) -> &str {
    p.group.as_deref().unwrap_or("all")
}

fn property_values(items: &[&Prediction], groups: &[String]) -> Vec<f64> {
    let mut v = Vec::new();
    let (mut accs, mut aucs) = (Vec::new(), Vec::new());
    for g in groups {
        let sub: Vec<&Prediction> = items.iter().copied().filter(|p| group_name(p) == g).collect();
        let pairs: Vec<(Option<&str>, &str)> = sub.iter().map(|p| (p.prediction.as_deref(), p.gold.as_str())).collect();
        let acc = MetricId::Accuracy.aggregate(&pairs);
        let auc = MetricId::AucRoc.aggregate(&pairs);
        accs.push(acc);
        aucs.push(auc);
        v.extend([acc, auc]);
    }
    let avg = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    v.extend([avg(&accs), avg(&aucs)]);
    v
}

/// Builds the per-path table for `task_type` from a run log. Rows are sorted
/// by path; a later prediction for the same item replaces an earlier one.
pub fn build_table(entries: &[LogEntry], task_type: TaskType) -> Result<ReportTable, ReportError> {
    let mut by_path: BTreeMap<String, BTreeMap<String, Prediction>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.kind == kind::PREDICTION) {
        let p: Prediction =
            serde_json::from_value(e.data.clone()).map_err(|err| ReportError::Malformed(err.to_string()))?;
        by_path.entry(p.path.clone()).or_default().insert(p.id.clone(), p);
    }
    if by_path.is_empty() {
        return Err(ReportError::EmptyLog);
    }
    let mut groups: Vec<String> = by_path
        .values()
        .flat_map(|m| m.values().map(|p| group_name(p).to_string()))
        .collect();
    groups.sort();
    groups.dedup();

    let columns = match task_type {
        TaskType::Design | TaskType::Reaction => generation_columns(),
        TaskType::Captioning => caption_columns(),
        TaskType::Property => {
            let mut c: Vec<String> = groups
                .iter()
                .flat_map(|g| [format!("{g} ACC"), format!("{g} AUC")])
                .collect();
            c.extend(["Avg ACC".to_string(), "Avg AUC".to_string()]);
            c
        }
    };
    let rows = by_path
        .into_iter()
        .map(|(path, preds)| {
            let items: Vec<&Prediction> = preds.values().collect();
            let values = match task_type {
                TaskType::Design | TaskType::Reaction => generation_values(&items),
                TaskType::Captioning => caption_values(&items),
                TaskType::Property => property_values(&items, &groups),
            };
            ReportRow {
                path,
                items: items.len(),
                values,
            }
        })
        .collect();
    Ok(ReportTable { columns, rows })
}

fn write_file(path: &Path, text: &str) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Writes `report.csv` and `report.txt` into `dir`.
pub fn emit_report(entries: &[LogEntry], task_type: TaskType, dir: &Path) -> Result<ReportTable, ReportError> {
    let table = build_table(entries, task_type)?;
    write_file(&dir.join("report.csv"), &table.to_csv())?;
    write_file(&dir.join("report.txt"), &table.to_text())?;
    Ok(table)
}

/// Pretty JSON with a trailing newline. Field order is fixed by the types,
/// so equal reports give equal bytes.
pub fn write_search_report(path: &Path, report: &SearchReport) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    write_file(path, &text)
}
