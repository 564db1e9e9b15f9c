//! Labels how the top-level agent used its tools' outputs.
//!
//! Only successful top-level invocations are considered. Rules are tried in
//! order and the first match wins:
//!
//! * reserve: the final answer is empty or an abstention.
//! * judge: the final answer is one of at least two distinct outputs, and a
//!   differing output was produced from the same input without scoring higher.
//! * correct: the final answer is a later output that strictly outscores an
//!   earlier differing output, and the later call was not fed that output.
//! * modify: the final answer is new text derived from some output, or a
//!   later output whose call was fed an earlier output.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::{Invocation, Trace};
use crate::metrics::{levenshtein_norm, MetricId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorPattern {
    Correct,
    Modify,
    Judge,
    Reserve,
    Unclassified,
}

impl BehaviorPattern {
    pub const ALL: [BehaviorPattern; 5] = [
        BehaviorPattern::Correct,
        BehaviorPattern::Modify,
        BehaviorPattern::Judge,
        BehaviorPattern::Reserve,
        BehaviorPattern::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorPattern::Correct => "correct",
            BehaviorPattern::Modify => "modify",
            BehaviorPattern::Judge => "judge",
            BehaviorPattern::Reserve => "reserve",
            BehaviorPattern::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for BehaviorPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorThresholds {
    /// Minimum normalized Levenshtein similarity for a final answer to count
    /// as an edit of a tool output.
    pub modify_similarity: f64,
    /// Minimum similarity for an input token to count as a copy of an output.
    pub derive_similarity: f64,
    /// Lowercase phrases marking an abstention.
    pub abstention: Vec<String>,
}

impl Default for BehaviorThresholds {
    fn default() -> Self {
        BehaviorThresholds {
            modify_similarity: 0.5,
            derive_similarity: 0.5,
            abstention: [
                "unable to",
                "cannot provide",
                "can't provide",
                "cannot determine",
                "not able to",
                "i don't know",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

pub fn classify(trace: &Trace, gold: &str, metric: MetricId) -> BehaviorPattern {
    classify_with(trace, gold, metric, &BehaviorThresholds::default())
}

pub fn classify_with(trace: &Trace, gold: &str, metric: MetricId, th: &BehaviorThresholds) -> BehaviorPattern {
    let final_answer = trace.final_answer.trim();
    let lower = final_answer.to_lowercase();
    if final_answer.is_empty() || th.abstention.iter().any(|p| lower.contains(p.as_str())) {
        return BehaviorPattern::Reserve;
    }

    let calls: Vec<Invocation<'_>> = trace.invocations(0).into_iter().filter(|c| !c.failed).collect();
    let out = |c: &Invocation<'_>| c.output.trim().to_string();
    let score = |c: &Invocation<'_>| metric.score(c.output.trim(), gold);
    let derives = |input: &str, output: &str| derives_from(input, output, th.derive_similarity);

    let mut distinct: Vec<String> = calls.iter().map(out).collect();
    distinct.sort();
    distinct.dedup();
    let adopted: Vec<usize> = (0..calls.len()).filter(|&i| out(&calls[i]) == final_answer).collect();

    if distinct.len() >= 2 && !adopted.is_empty() {
        let judged = adopted.iter().any(|&a| {
            calls.iter().any(|b| {
                out(b) != final_answer && b.input.trim() == calls[a].input.trim() && score(&calls[a]) >= score(b)
            })
        });
        if judged {
            return BehaviorPattern::Judge;
        }
    }

    let corrected = adopted.iter().any(|&j| {
        calls[..j].iter().any(|earlier| {
            out(earlier) != final_answer
                && score(&calls[j]) > score(earlier)
                && !derives(calls[j].input, earlier.output)
        })
    });
    if corrected {
        return BehaviorPattern::Correct;
    }

    let modified = if adopted.is_empty() {
        calls.iter().enumerate().any(|(i, c)| {
            calls[i + 1..].iter().any(|later| derives(later.input, c.output))
                || levenshtein_norm(final_answer, c.output.trim()) >= th.modify_similarity
        })
    } else {
        adopted
            .iter()
            .any(|&j| calls[..j].iter().any(|earlier| derives(calls[j].input, earlier.output)))
    };
    if modified {
        BehaviorPattern::Modify
    } else {
        BehaviorPattern::Unclassified
    }
}

/// Whether `input` carries `output`, verbatim or as a close token.
fn derives_from(input: &str, output: &str, threshold: f64) -> bool {
    let output = output.trim();
    if output.chars().count() < 2 {
        return false;
    }
    if input.contains(output) {
        return true;
    }
    input
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| matches!(c, '"' | '\'' | ',' | ';' | '.' | ':' | '`')))
        .filter(|t| !t.is_empty())
        .any(|t| levenshtein_norm(t, output) >= threshold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: BTreeMap<BehaviorPattern, usize>,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram {
            counts: BehaviorPattern::ALL.into_iter().map(|p| (p, 0)).collect(),
        }
    }
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, p: BehaviorPattern) -> usize {
        self.counts[&p]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pattern,count\n");
        for p in BehaviorPattern::ALL {
            s.push_str(&format!("{},{}\n", p, self.counts[&p]));
        }
        s
    }
}

pub fn pattern_histogram<'a>(traces: impl IntoIterator<Item = (&'a Trace, &'a str)>, metric: MetricId) -> Histogram {
    let mut h = Histogram::default();
    for (trace, gold) in traces {
        *h.counts.entry(classify(trace, gold, metric)).or_insert(0) += 1;
    }
    h
}
