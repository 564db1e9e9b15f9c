//! Hierarchical stack-path notation.
//!
//! A path names which agent holds which tools at which level:
//!
//! - `'Name2SMILES_0'` is the bare tool, `'Name2SMILES_2'` the tool wrapped
//!   in two nested agents (self-stacking).
//! - `['A_1','B_0']` is one agent holding both tools.
//! - `[['A_0','B_1'],'A_1']` nests an agent inside another agent's toolset.
//!
//! A group with a single child is transparent: `['A_2']` behaves exactly
//! like `'A_2'`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Deepest bracket nesting the parser accepts.
pub const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ToolRef {
    base: String,
    self_depth: u32,
}

impl ToolRef {
    /// Builds a reference, rejecting names that already carry a `_<digits>`
    /// suffix or contain characters outside the identifier set.
    pub fn new(base: impl Into<String>, self_depth: u32) -> Result<Self, PathError> {
        let base = base.into();
        validate_base_name(&base).map_err(|message| PathError::Malformed { offset: 0, message })?;
        Ok(Self { base, self_depth })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn self_depth(&self) -> u32 {
        self.self_depth
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathExpr {
    Tool(ToolRef),
    Group(Vec<PathExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("malformed path at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
}

/// Summary numbers for a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStats {
    pub agent_count: u32,
    pub depth: u32,
    pub base_tools: BTreeMap<String, u32>,
}

impl PathExpr {
    pub fn tool(base: &str, self_depth: u32) -> Result<Self, PathError> {
        ToolRef::new(base, self_depth).map(PathExpr::Tool)
    }

    /// Builds a group; an empty child list is rejected.
    pub fn group(children: Vec<PathExpr>) -> Result<Self, PathError> {
        if children.is_empty() {
            return Err(PathError::Malformed {
                offset: 0,
                message: "empty group".into(),
            });
        }
        Ok(PathExpr::Group(children))
    }

    pub fn parse(text: &str) -> Result<Self, PathError> {
        Parser::new(text).parse_document()
    }

    /// Canonical text: single quotes, no whitespace.
    pub fn serialize(&self) -> String {
        self.to_string()
    }

    /// Number of agents the path instantiates.
    ///
    /// A tool reference contributes its self-stacking depth; a group with two
    /// or more children adds one agent on top of its children, a single-child
    /// group adds nothing.
    pub fn agent_count(&self) -> u32 {
        match self {
            PathExpr::Tool(t) => t.self_depth,
            PathExpr::Group(children) => {
                let inner: u32 = children.iter().map(PathExpr::agent_count).sum();
                if children.len() >= 2 {
                    inner + 1
                } else {
                    inner
                }
            }
        }
    }

    /// Maximum nesting of agent loops.
    pub fn depth(&self) -> u32 {
        match self {
            PathExpr::Tool(t) => t.self_depth,
            PathExpr::Group(children) if children.len() == 1 => children[0].depth(),
            PathExpr::Group(children) => 1 + children.iter().map(PathExpr::depth).max().unwrap_or(0),
        }
    }

    pub fn stats(&self) -> PathStats {
        let mut base_tools = BTreeMap::new();
        self.visit_refs(&mut |r| *base_tools.entry(r.base.clone()).or_insert(0) += 1);
        PathStats {
            agent_count: self.agent_count(),
            depth: self.depth(),
            base_tools,
        }
    }

    /// First tool reference in depth-first order.
    pub fn first_ref(&self) -> &ToolRef {
        match self {
            PathExpr::Tool(t) => t,
            PathExpr::Group(children) => children[0].first_ref(),
        }
    }

    /// Calls `f` on every tool reference, depth-first, left to right.
    pub fn visit_refs<'a>(&'a self, f: &mut impl FnMut(&'a ToolRef)) {
        match self {
            PathExpr::Tool(t) => f(t),
            PathExpr::Group(children) => children.iter().for_each(|c| c.visit_refs(f)),
        }
    }

    /// Strips any chain of single-child groups.
    pub fn unwrap_single(&self) -> &PathExpr {
        match self {
            PathExpr::Group(children) if children.len() == 1 => children[0].unwrap_single(),
            other => other,
        }
    }

    /// Path as it would be listed on its own: tool references are wrapped in
    /// a one-element group, `'A_1'` becomes `['A_1']`.
    pub fn as_listed(&self) -> PathExpr {
        match self.unwrap_single() {
            PathExpr::Tool(t) => PathExpr::Group(vec![PathExpr::Tool(t.clone())]),
            group => group.clone(),
        }
    }

    /// Joins several paths as the toolset of one new agent. Single-child
    /// wrappers of the members are dropped, so `['A_1']` and `['B_0']`
    /// combine to `['A_1','B_0']`.
    pub fn combine<'a>(members: impl IntoIterator<Item = &'a PathExpr>) -> Result<PathExpr, PathError> {
        let children: Vec<PathExpr> = members.into_iter().map(|m| m.unwrap_single().clone()).collect();
        PathExpr::group(children)
    }
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathExpr::Tool(t) => write!(f, "'{}_{}'", t.base, t.self_depth),
            PathExpr::Group(children) => {
                f.write_str("[")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("]")
            }
        }
    }
}

impl std::str::FromStr for PathExpr {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PathExpr::parse(s)
    }
}

impl Serialize for PathExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PathExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        PathExpr::parse(&text).map_err(serde::de::Error::custom)
    }
}

fn is_name_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b'+' | b'.')
}

fn validate_base_name(base: &str) -> Result<(), String> {
    if base.is_empty() {
        return Err("empty tool name".into());
    }
    if let Some(bad) = base.bytes().find(|&c| !is_name_char(c)) {
        return Err(format!("illegal character {:?} in tool name", bad as char));
    }
    if let Some((_, tail)) = base.rsplit_once('_') {
        if !tail.is_empty() && tail.bytes().all(|c| c.is_ascii_digit()) {
            return Err(format!("tool name {base:?} already ends in a depth suffix"));
        }
    }
    Ok(())
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            src: text.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, PathError> {
        Err(PathError::Malformed {
            offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn parse_document(mut self) -> Result<PathExpr, PathError> {
        self.skip_ws();
        if self.peek().is_none() {
            return self.err(self.pos, "empty path");
        }
        let expr = self.parse_expr(0)?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return self.err(self.pos, "trailing characters after path");
        }
        Ok(expr)
    }

    fn parse_expr(&mut self, depth: usize) -> Result<PathExpr, PathError> {
        self.skip_ws();
        match self.peek() {
            Some(b'[') => self.parse_group(depth),
            Some(b'\'') | Some(b'"') => self.parse_quoted(),
            Some(c) if is_name_char(c) => self.parse_name(None),
            Some(b']') => self.err(self.pos, "unexpected ']'"),
            Some(c) => self.err(self.pos, format!("illegal character {:?}", c as char)),
            None => self.err(self.pos, "unexpected end of path"),
        }
    }

    fn parse_group(&mut self, depth: usize) -> Result<PathExpr, PathError> {
        let open = self.pos;
        if depth + 1 > MAX_DEPTH {
            return self.err(open, format!("nesting deeper than {MAX_DEPTH}"));
        }
        self.pos += 1;
        self.skip_ws();
        if self.peek() == Some(b']') {
            return self.err(self.pos, "empty group");
        }
        let mut children = Vec::new();
        loop {
            children.push(self.parse_expr(depth + 1)?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                }
                Some(b']') => {
                    self.pos += 1;
                    return Ok(PathExpr::Group(children));
                }
                None => return self.err(self.pos, format!("unbalanced '[' opened at byte {open}")),
                Some(c) => return self.err(self.pos, format!("expected ',' or ']', found {:?}", c as char)),
            }
        }
    }

    fn parse_quoted(&mut self) -> Result<PathExpr, PathError> {
        let quote = self.src[self.pos];
        self.pos += 1;
        let expr = self.parse_name(Some(quote))?;
        match self.peek() {
            Some(c) if c == quote => {
                self.pos += 1;
                Ok(expr)
            }
            None => self.err(self.pos, "unterminated quoted name"),
            Some(c) => self.err(self.pos, format!("illegal character {:?} in tool name", c as char)),
        }
    }

    /// Reads `name_digits` and stops at the first byte outside the name set.
    fn parse_name(&mut self, quote: Option<u8>) -> Result<PathExpr, PathError> {
        let start = self.pos;
        while self.peek().is_some_and(is_name_char) {
            self.pos += 1;
        }
        let end = self.pos;
        if start == end {
            return match (self.peek(), quote) {
                (Some(c), Some(q)) if c == q => self.err(start, "empty tool name"),
                (Some(c), _) => self.err(start, format!("illegal character {:?}", c as char)),
                (None, _) => self.err(start, "unexpected end of path"),
            };
        }
        // Names are ASCII by construction of `is_name_char`.
        let raw = std::str::from_utf8(&self.src[start..end]).expect("ascii name");
        let Some(underscore) = raw.rfind('_') else {
            return self.err(end, format!("missing '_<depth>' suffix on {raw:?}"));
        };
        let (base, digits) = (&raw[..underscore], &raw[underscore + 1..]);
        if digits.is_empty() {
            return self.err(start + underscore + 1, "missing depth digits after '_'");
        }
        if !digits.bytes().all(|c| c.is_ascii_digit()) {
            // `Foo_bar`: the last underscore is part of the name, no suffix at all.
            return self.err(end, format!("missing '_<depth>' suffix on {raw:?}"));
        }
        let self_depth: u32 = digits
            .parse()
            .or_else(|_| self.err(start + underscore + 1, "depth suffix out of range"))?;
        if let Err(message) = validate_base_name(base) {
            return self.err(start, message);
        }
        Ok(PathExpr::Tool(ToolRef {
            base: base.to_string(),
            self_depth,
        }))
    }
}
