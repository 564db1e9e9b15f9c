//! Syntactic SMILES handling: tokenizer, validity checks and a token n-gram
//! fingerprint. No valence model, no aromaticity perception.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Fnv64;
use crate::metrics::Fingerprint;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal SMILES character {found:?} at byte {position}")]
pub struct LexError {
    pub position: usize,
    pub found: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    OrganicAtom,
    BracketAtom,
    Bond,
    RingClosure,
    BranchOpen,
    BranchClose,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmilesToken {
    pub kind: TokenKind,
    pub text: String,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

const TWO_LETTER_ORGANIC: [&str; 2] = ["Cl", "Br"];
const ONE_LETTER_ORGANIC: &[u8] = b"BCNOPSFIbcnops";
const BONDS: &[u8] = b"-=#:/\\";

pub fn tokenize(smiles: &str) -> Result<Vec<SmilesToken>, LexError> {
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    let lex_err = |position: usize| LexError {
        position,
        found: smiles[position..].chars().next().map(String::from).unwrap_or_default(),
    };
    while pos < bytes.len() {
        let c = bytes[pos];
        let (kind, len) =
            if pos + 1 < bytes.len() && TWO_LETTER_ORGANIC.iter().any(|t| t.as_bytes() == &bytes[pos..pos + 2]) {
                (TokenKind::OrganicAtom, 2)
            } else if ONE_LETTER_ORGANIC.contains(&c) {
                (TokenKind::OrganicAtom, 1)
            } else if c == b'[' {
                let close = bytes[pos + 1..]
                    .iter()
                    .position(|&b| b == b']' || b == b'[')
                    .map(|i| pos + 1 + i);
                match close {
                    Some(end) if bytes[end] == b']' => {
                        if let Some(bad) = (pos + 1..end).find(|&i| !is_bracket_char(bytes[i])) {
                            return Err(lex_err(bad));
                        }
                        (TokenKind::BracketAtom, end + 1 - pos)
                    }
                    _ => return Err(lex_err(pos)),
                }
            } else if BONDS.contains(&c) {
                (TokenKind::Bond, 1)
            } else if c.is_ascii_digit() {
                (TokenKind::RingClosure, 1)
            } else if c == b'%' {
                if pos + 2 < bytes.len() && bytes[pos + 1].is_ascii_digit() && bytes[pos + 2].is_ascii_digit() {
                    (TokenKind::RingClosure, 3)
                } else {
                    return Err(lex_err(pos));
                }
            } else if c == b'(' {
                (TokenKind::BranchOpen, 1)
            } else if c == b')' {
                (TokenKind::BranchClose, 1)
            } else if c == b'.' {
                (TokenKind::Dot, 1)
            } else {
                return Err(lex_err(pos));
            };
        tokens.push(SmilesToken {
            kind,
            text: smiles[pos..pos + len].to_string(),
            position: pos,
        });
        pos += len;
    }
    Ok(tokens)
}

fn is_bracket_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, b'@' | b'+' | b'-' | b':' | b'*')
}

/// Ring label of a ring-closure token: `1` or `%12`.
fn ring_label(text: &str) -> u8 {
    text.trim_start_matches('%').parse().unwrap_or(0)
}

pub fn validate(smiles: &str) -> ValidityReport {
    let mut violations = Vec::new();
    let mut push = |rule: &str, position: usize, message: String| {
        violations.push(Violation {
            rule: rule.to_string(),
            position,
            message,
        })
    };

    let tokens = match tokenize(smiles) {
        Ok(t) => t,
        Err(e) => {
            push("lex", e.position, e.to_string());
            return ValidityReport {
                valid: false,
                violations,
            };
        }
    };
    if !tokens
        .iter()
        .any(|t| matches!(t.kind, TokenKind::OrganicAtom | TokenKind::BracketAtom))
    {
        push("empty", 0, "no atoms".into());
    }

    let mut branch_stack: Vec<usize> = Vec::new();
    let mut open_rings: std::collections::BTreeMap<u8, usize> = std::collections::BTreeMap::new();
    let mut prev: Option<&SmilesToken> = None;
    let mut atom_in_component = false;

    for tok in &tokens {
        let prev_kind = prev.map(|p| p.kind);
        match tok.kind {
            TokenKind::OrganicAtom => atom_in_component = true,
            TokenKind::BracketAtom => {
                atom_in_component = true;
                let inner = &tok.text[1..tok.text.len() - 1];
                let symbol_start = inner.trim_start_matches(|c: char| c.is_ascii_digit());
                if inner.is_empty() {
                    push("bracket", tok.position, "empty bracket atom".into());
                } else if !symbol_start.starts_with(|c: char| c.is_ascii_alphabetic() || c == '*') {
                    push(
                        "bracket",
                        tok.position,
                        format!("bracket atom {} has no element", tok.text),
                    );
                }
            }
            TokenKind::Bond => {
                if !atom_in_component || prev_kind == Some(TokenKind::Dot) {
                    push("bond", tok.position, "bond with no preceding atom".into());
                } else if prev_kind == Some(TokenKind::Bond) {
                    push("bond", tok.position, "two consecutive bonds".into());
                }
            }
            TokenKind::RingClosure => {
                if !atom_in_component || matches!(prev_kind, Some(TokenKind::BranchOpen) | Some(TokenKind::Dot) | None)
                {
                    push(
                        "ring",
                        tok.position,
                        format!("ring closure {} does not follow an atom", tok.text),
                    );
                }
                let label = ring_label(&tok.text);
                if open_rings.remove(&label).is_none() {
                    open_rings.insert(label, tok.position);
                }
            }
            TokenKind::BranchOpen => {
                if !atom_in_component || matches!(prev_kind, Some(TokenKind::Bond) | Some(TokenKind::Dot) | None) {
                    push("branch", tok.position, "branch does not follow an atom".into());
                }
                branch_stack.push(tok.position);
            }
            TokenKind::BranchClose => {
                if branch_stack.pop().is_none() {
                    push("branch", tok.position, "unbalanced ')'".into());
                }
                match prev_kind {
                    Some(TokenKind::BranchOpen) => push("branch", tok.position, "empty branch".into()),
                    Some(TokenKind::Bond) => push("bond", tok.position, "bond before ')'".into()),
                    _ => {}
                }
            }
            TokenKind::Dot => {
                if !atom_in_component || matches!(prev_kind, Some(TokenKind::Bond) | Some(TokenKind::BranchOpen)) {
                    push("dot", tok.position, "dot without a preceding component".into());
                }
                if !branch_stack.is_empty() {
                    push("dot", tok.position, "dot inside a branch".into());
                }
                atom_in_component = false;
            }
        }
        prev = Some(tok);
    }
    if let Some(last) = prev {
        match last.kind {
            TokenKind::Bond => push("bond", last.position, "bond at end of string".into()),
            TokenKind::Dot => push("dot", last.position, "dot at end of string".into()),
            _ => {}
        }
    }
    for pos in branch_stack {
        push("branch", pos, "unbalanced '('".into());
    }
    for (label, pos) in open_rings {
        push("ring", pos, format!("unclosed ring closure {label}"));
    }
    violations.sort_by_key(|v| v.position);
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// Sets one bit per token n-gram, indexed by the 64-bit FNV-1a hash of the
/// lexemes joined with `0x1f`, modulo `width`. Inputs shorter than `n`
/// tokens contribute the whole token sequence as a single gram.
pub fn ngram_fingerprint(smiles: &str, width: usize, n: usize) -> Result<Fingerprint, LexError> {
    assert!(width >= 64, "fingerprint width must be at least 64");
    assert!(n >= 1, "gram size must be positive");
    let tokens = tokenize(smiles)?;
    let mut fp = Fingerprint::new(width, format!("ngram{n}-{width}"));
    let lexemes: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
    let grams: Vec<&[&str]> = if lexemes.is_empty() {
        Vec::new()
    } else if lexemes.len() < n {
        vec![&lexemes[..]]
    } else {
        lexemes.windows(n).collect()
    };
    for gram in grams {
        let mut h = Fnv64::new();
        for (i, lexeme) in gram.iter().enumerate() {
            if i > 0 {
                h.write(&[0x1f]);
            }
            h.write(lexeme.as_bytes());
        }
        fp.set((h.finish() % width as u64) as usize);
    }
    Ok(fp)
}
