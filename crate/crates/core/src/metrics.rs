//! Text, fingerprint and classification metrics.
//!
//! Every [`MetricId`] scores a single prediction into `[0, 1]`, higher is
//! better. Raw Levenshtein distance is available separately through
//! [`levenshtein`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::smiles;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("fingerprints are not comparable: {0}")]
    WidthMismatch(String),
    #[error("AUC-ROC is undefined without both a positive and a negative label")]
    Undefined,
    #[error("unparseable classification answer: {0:?}")]
    UnparseableAnswer(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    Char,
    Whitespace,
}

impl Tokenizer {
    pub fn tokens(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

/// Fingerprint families used by the Tanimoto metric. These are token n-gram
/// stand-ins with different widths and gram sizes, not the chemistry-exact
/// MACCS/RDK/Morgan keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fingerprinter {
    /// 167 bits over token unigrams.
    MaccsLike,
    /// 2048 bits over token bigrams.
    RdkLike,
    /// 2048 bits over token trigrams.
    MorganLike,
}

impl Fingerprinter {
    pub const ALL: [Fingerprinter; 3] = [
        Fingerprinter::MaccsLike,
        Fingerprinter::RdkLike,
        Fingerprinter::MorganLike,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Fingerprinter::MaccsLike => "maccs_like",
            Fingerprinter::RdkLike => "rdk_like",
            Fingerprinter::MorganLike => "morgan_like",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Fingerprinter::MaccsLike => 167,
            Fingerprinter::RdkLike | Fingerprinter::MorganLike => 2048,
        }
    }

    pub fn gram(self) -> usize {
        match self {
            Fingerprinter::MaccsLike => 1,
            Fingerprinter::RdkLike => 2,
            Fingerprinter::MorganLike => 3,
        }
    }

    pub fn fingerprint(self, smiles_text: &str) -> Result<Fingerprint, smiles::LexError> {
        let mut fp = smiles::ngram_fingerprint(smiles_text, self.width(), self.gram())?;
        fp.source = self.id().to_string();
        Ok(fp)
    }

    fn from_id(id: &str) -> Option<Self> {
        Fingerprinter::ALL.into_iter().find(|f| f.id() == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricId {
    Exact,
    Bleu { n: u8, tokenizer: Tokenizer },
    Rouge(RougeVariant),
    LevenshteinNorm,
    Validity,
    Tanimoto(Fingerprinter),
    Accuracy,
    AucRoc,
}

impl MetricId {
    /// Scores one prediction against its gold text.
    ///
    /// `AucRoc` has no per-item value; this returns the closeness of the
    /// parsed answer score to the gold label, which is what greedy judging
    /// uses. Dataset-level AUC goes through [`auc_roc`].
    pub fn score(&self, pred: &str, gold: &str) -> f64 {
        match *self {
            MetricId::Exact => f64::from(u8::from(pred.trim() == gold.trim())),
            MetricId::Bleu { n, tokenizer } => bleu(pred, &[gold], n, tokenizer, false),
            MetricId::Rouge(v) => rouge(pred, gold, v),
            MetricId::LevenshteinNorm => levenshtein_norm(pred.trim(), gold.trim()),
            MetricId::Validity => f64::from(u8::from(smiles::validate(pred.trim()).valid)),
            MetricId::Tanimoto(fpr) => match (fpr.fingerprint(pred.trim()), fpr.fingerprint(gold.trim())) {
                (Ok(a), Ok(b)) => tanimoto(&a, &b).unwrap_or(0.0),
                _ => 0.0,
            },
            MetricId::Accuracy => {
                let gold_label = parse_gold_label(gold);
                match classification_score(pred) {
                    Ok((label, _)) => f64::from(u8::from(Some(label) == gold_label)),
                    Err(_) => 0.0,
                }
            }
            MetricId::AucRoc => {
                let Some(gold_label) = parse_gold_label(gold) else {
                    return 0.0;
                };
                let score = classification_score(pred).map(|(_, s)| s).unwrap_or(0.0);
                1.0 - (score - f64::from(gold_label)).abs()
            }
        }
    }

    /// Aggregates per-item predictions into one dataset score: the arithmetic
    /// mean for every metric except `AucRoc`, which ranks the whole set.
    /// Items whose run failed are passed as `None` and score 0.
    pub fn aggregate(&self, items: &[(Option<&str>, &str)]) -> f64 {
        if items.is_empty() {
            return 0.0;
        }
        if *self == MetricId::AucRoc {
            let preds: Vec<(f64, u8)> = items
                .iter()
                .filter_map(|(pred, gold)| {
                    let label = parse_gold_label(gold)?;
                    let score = pred
                        .and_then(|p| classification_score(p).ok())
                        .map(|(_, s)| s)
                        .unwrap_or(0.0);
                    Some((score, label))
                })
                .collect();
            return auc_roc(&preds).unwrap_or(0.5);
        }
        let total: f64 = items
            .iter()
            .map(|(pred, gold)| pred.map_or(0.0, |p| self.score(p, gold)))
            .sum();
        total / items.len() as f64
    }
}

fn parse_gold_label(gold: &str) -> Option<u8> {
    match gold.trim() {
        "1" => Some(1),
        "0" => Some(0),
        other => classification_score(other).ok().map(|(l, _)| l),
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricId::Exact => f.write_str("exact"),
            MetricId::Bleu { n, tokenizer } => {
                let tok = match tokenizer {
                    Tokenizer::Char => "char",
                    Tokenizer::Whitespace => "whitespace",
                };
                write!(f, "bleu{n}:{tok}")
            }
            MetricId::Rouge(RougeVariant::One) => f.write_str("rouge1"),
            MetricId::Rouge(RougeVariant::Two) => f.write_str("rouge2"),
            MetricId::Rouge(RougeVariant::L) => f.write_str("rougeL"),
            MetricId::LevenshteinNorm => f.write_str("levenshtein_norm"),
            MetricId::Validity => f.write_str("validity"),
            MetricId::Tanimoto(fpr) => write!(f, "tanimoto:{}", fpr.id()),
            MetricId::Accuracy => f.write_str("accuracy"),
            MetricId::AucRoc => f.write_str("auc_roc"),
        }
    }
}

impl FromStr for MetricId {
    type Err = MetricError;

    /// Accepts `exact`, `bleu2`, `bleu-4:whitespace`, `rouge-l`,
    /// `levenshtein_norm`, `validity`, `tanimoto[:maccs_like]`, `accuracy`,
    /// `auc_roc`. BLEU defaults to the character tokenizer.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || MetricError::UnknownMetric(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h.to_string(), Some(a.to_string())),
            None => (lower.clone(), None),
        };
        let head = head.replace(['-', '_'], "");
        let metric = match head.as_str() {
            "exact" => MetricId::Exact,
            "levenshteinnorm" | "levenshtein" | "dis" => MetricId::LevenshteinNorm,
            "validity" => MetricId::Validity,
            "accuracy" | "acc" => MetricId::Accuracy,
            "aucroc" | "auc" => MetricId::AucRoc,
            "rouge1" => MetricId::Rouge(RougeVariant::One),
            "rouge2" => MetricId::Rouge(RougeVariant::Two),
            "rougel" => MetricId::Rouge(RougeVariant::L),
            "tanimoto" | "fts" => {
                let fpr = match arg.as_deref() {
                    None => Fingerprinter::RdkLike,
                    Some(id) => Fingerprinter::from_id(id).ok_or_else(unknown)?,
                };
                return Ok(MetricId::Tanimoto(fpr));
            }
            h if h.starts_with("bleu") => {
                let n: u8 = h[4..].parse().map_err(|_| unknown())?;
                if !(1..=4).contains(&n) {
                    return Err(unknown());
                }
                let tokenizer = match arg.as_deref() {
                    None | Some("char") => Tokenizer::Char,
                    Some("whitespace") | Some("ws") => Tokenizer::Whitespace,
                    Some(_) => return Err(unknown()),
                };
                return Ok(MetricId::Bleu { n, tokenizer });
            }
            _ => return Err(unknown()),
        };
        if arg.is_some() {
            return Err(unknown());
        }
        Ok(metric)
    }
}

impl Serialize for MetricId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MetricId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Minimum number of single-character insertions, deletions and
/// substitutions turning `a` into `b`.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

/// `1 − dist / max(len)`; two empty strings are identical.
pub fn levenshtein_norm(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU with uniform weights up to `n`, clipped counts against the
/// maximum reference count, and the closest-reference brevity penalty.
///
/// Without smoothing a zero precision at any order zeroes the score;
/// `smooth` applies add-one smoothing to orders above one.
pub fn bleu(pred: &str, refs: &[&str], n: u8, tokenizer: Tokenizer, smooth: bool) -> f64 {
    let n = usize::from(n.max(1));
    let hyp = tokenizer.tokens(pred);
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = refs.iter().map(|r| tokenizer.tokens(r)).collect();

    let mut log_sum = 0.0;
    for order in 1..=n {
        let hyp_counts = ngram_counts(&hyp, order);
        let total: usize = hyp_counts.values().sum();
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (gram, c) in ngram_counts(r, order) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        let matched: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
            .sum();
        let (num, den) = if smooth && order > 1 {
            (matched as f64 + 1.0, total as f64 + 1.0)
        } else {
            (matched as f64, total as f64)
        };
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }

    let hyp_len = hyp.len();
    let ref_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .unwrap_or(0);
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * (log_sum / n as f64).exp()
}

fn f1(overlap: f64, pred_total: f64, ref_total: f64) -> f64 {
    if overlap == 0.0 || pred_total == 0.0 || ref_total == 0.0 {
        return 0.0;
    }
    let p = overlap / pred_total;
    let r = overlap / ref_total;
    2.0 * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// ROUGE F1 on whitespace tokens.
pub fn rouge(pred: &str, reference: &str, variant: RougeVariant) -> f64 {
    let p = Tokenizer::Whitespace.tokens(pred);
    let r = Tokenizer::Whitespace.tokens(reference);
    match variant {
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let pc = ngram_counts(&p, n);
            let rc = ngram_counts(&r, n);
            let overlap: usize = pc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
            f1(
                overlap as f64,
                pc.values().sum::<usize>() as f64,
                rc.values().sum::<usize>() as f64,
            )
        }
        RougeVariant::L => f1(lcs_len(&p, &r) as f64, p.len() as f64, r.len() as f64),
    }
}

/// Fixed-width bitset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
    pub source: String,
}

impl Fingerprint {
    pub fn new(width: usize, source: impl Into<String>) -> Self {
        Self {
            words: vec![0; width.div_ceil(64)],
            width,
            source: source.into(),
        }
    }

    pub fn from_bits(width: usize, source: impl Into<String>, bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Fingerprint::new(width, source);
        for b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Sets bit `index % width`.
    pub fn set(&mut self, index: usize) {
        let i = index % self.width;
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, index: usize) -> bool {
        index < self.width && self.words[index / 64] & (1 << (index % 64)) != 0
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&i| self.get(i))
    }

    /// Hex of the bitset, byte `i` holding bits `8i..8i+8` (least
    /// significant bit first).
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = (0..self.width.div_ceil(8))
            .map(|i| (self.words[i / 8] >> ((i % 8) * 8)) as u8)
            .collect();
        hex::encode(bytes)
    }
}

/// `|a ∧ b| / |a ∨ b|`, with two empty fingerprints counting as identical.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, MetricError> {
    if a.width != b.width || a.source != b.source {
        return Err(MetricError::WidthMismatch(format!(
            "{}/{} vs {}/{}",
            a.source, a.width, b.source, b.width
        )));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(both) / f64::from(either))
}

/// Rank-sum (Mann–Whitney) AUC with average ranks for tied scores.
/// Input pairs are `(score, label)` with label 0 or 1.
pub fn auc_roc(preds: &[(f64, u8)]) -> Result<f64, MetricError> {
    let positives = preds.iter().filter(|p| p.1 == 1).count();
    let negatives = preds.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::Undefined);
    }
    let mut sorted: Vec<(f64, u8)> = preds.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = sorted[i..j].iter().filter(|p| p.1 == 1).count();
        rank_sum += avg * pos_in_tie as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Reads a leading Yes/No and an optional probability that follows it.
/// Without a probability the score equals the label.
pub fn classification_score(answer: &str) -> Result<(u8, f64), MetricError> {
    let trimmed = answer.trim_start();
    let lower = trimmed.to_ascii_lowercase();
    let (label, rest) = if lower.starts_with("yes") {
        (1u8, &trimmed[3..])
    } else if lower.starts_with("no") {
        (0u8, &trimmed[2..])
    } else {
        return Err(MetricError::UnparseableAnswer(answer.to_string()));
    };
    // "Nothing" or "Yesterday" are not answers.
    if rest.chars().next().is_some_and(char::is_alphanumeric) {
        return Err(MetricError::UnparseableAnswer(answer.to_string()));
    }
    let score = first_number(rest)
        .filter(|p| (0.0..=1.0).contains(p))
        .unwrap_or(f64::from(label));
    Ok((label, score))
}

fn first_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|c| c.is_ascii_digit())?;
    let mut end = start;
    let mut seen_dot = false;
    while end < bytes.len() && (bytes[end].is_ascii_digit() || (bytes[end] == b'.' && !seen_dot)) {
        seen_dot |= bytes[end] == b'.';
        end += 1;
    }
    text[start..end].trim_end_matches('.').parse().ok()
}
