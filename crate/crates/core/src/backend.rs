//! Concrete tool backends. Encapsulated tools are executed by the agent
//! executor, not here.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::hash::derive_seed;

pub const API_KEY_ENV: &str = "CHEMHTS_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("tool timed out after {0} ms")]
    Timeout(u64),
    #[error("simulated failure: {0}")]
    SimulatedFailure(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
}

/// Table-driven stand-in for a real tool.
///
/// Lookup uses the trimmed input. Unmatched inputs fall back to `fallback`,
/// where `{input}` is replaced by the input; no fallback means failure.
/// With probability `error_rate` one character of the output is replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedBackend {
    pub table: BTreeMap<String, String>,
    #[serde(default)]
    pub fallback: Option<String>,
    #[serde(default)]
    pub error_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latency_ms: u64,
}

const CORRUPTION_ALPHABET: &[u8] = b"CNOSPFcnos()=#123[]+-";

impl SimulatedBackend {
    pub fn new(table: impl IntoIterator<Item = (String, String)>) -> Self {
        SimulatedBackend {
            table: table.into_iter().collect(),
            fallback: None,
            error_rate: 0.0,
            seed: 0,
            latency_ms: 0,
        }
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = Some(fallback.into());
        self
    }

    pub fn with_error_rate(mut self, error_rate: f64, seed: u64) -> Self {
        self.error_rate = error_rate;
        self.seed = seed;
        self
    }

    /// `call_index` is the run-wide ordinal of this invocation.
    pub fn invoke(&self, tool: &str, input: &str, call_index: u64) -> Result<String, ToolError> {
        let key = input.trim();
        let output = match (self.table.get(key), &self.fallback) {
            (Some(out), _) => out.clone(),
            (None, Some(fb)) => fb.replace("{input}", key),
            (None, None) => return Err(ToolError::SimulatedFailure(format!("no entry for {key:?}"))),
        };
        if self.error_rate <= 0.0 {
            return Ok(output);
        }
        let seed = derive_seed(self.seed, &[tool.as_bytes(), key.as_bytes(), &call_index.to_le_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !rng.random_bool(self.error_rate.min(1.0)) {
            return Ok(output);
        }
        Ok(corrupt(&output, &mut rng))
    }
}

fn corrupt(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return String::from(CORRUPTION_ALPHABET[rng.random_range(0..CORRUPTION_ALPHABET.len())] as char);
    }
    let at = rng.random_range(0..chars.len());
    let original = chars[at];
    let candidates: Vec<char> = CORRUPTION_ALPHABET
        .iter()
        .map(|&b| b as char)
        .filter(|&c| c != original)
        .collect();
    chars[at] = candidates[rng.random_range(0..candidates.len())];
    chars.into_iter().collect()
}

/// `POST {endpoint}/invoke` with `{"tool", "input"}`, expecting `{"output"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpBackend {
    pub endpoint: String,
    #[serde(default = "default_http_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_http_timeout() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

#[derive(Deserialize)]
struct InvokeReply {
    output: String,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            timeout_ms: default_http_timeout(),
            retries: default_retries(),
        }
    }

    pub fn invoke(&self, tool: &str, input: &str) -> Result<String, ToolError> {
        let url = format!("{}/invoke", self.endpoint.trim_end_matches('/'));
        let body = serde_json::json!({ "tool": tool, "input": input });
        let mut last = ToolError::Transport("no attempt made".into());
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << (attempt - 1)));
            }
            match post_json(&url, &body, self.timeout_ms) {
                Ok(reply) => {
                    return serde_json::from_value::<InvokeReply>(reply)
                        .map(|r| r.output)
                        .map_err(|e| ToolError::Transport(format!("malformed reply: {e}")))
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

/// JSON POST with optional bearer token. Any status other than 200 is an error.
pub(crate) fn post_json(url: &str, body: &serde_json::Value, timeout_ms: u64) -> Result<serde_json::Value, ToolError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();
    let mut request = agent.post(url);
    if let Ok(key) = std::env::var(API_KEY_ENV) {
        request = request.header("Authorization", &format!("Bearer {key}"));
    }
    let mut response = request.send_json(body).map_err(|e| match e {
        ureq::Error::Timeout(_) => ToolError::Timeout(timeout_ms),
        other => ToolError::Transport(other.to_string()),
    })?;
    if response.status() != 200 {
        return Err(ToolError::Transport(format!("status {}", response.status().as_u16())));
    }
    response
        .body_mut()
        .read_json()
        .map_err(|e| ToolError::Transport(format!("unreadable body: {e}")))
}

/// Runs an executable per call: input on stdin, output on stdout.
/// Calls to the same backend are serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandBackend {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_command_timeout")]
    pub timeout_ms: u64,
    #[serde(skip)]
    lock: Arc<Mutex<()>>,
}

fn default_command_timeout() -> u64 {
    30_000
}

impl PartialEq for CommandBackend {
    fn eq(&self, other: &Self) -> bool {
        self.program == other.program && self.args == other.args && self.timeout_ms == other.timeout_ms
    }
}

impl CommandBackend {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, timeout_ms: u64) -> Self {
        CommandBackend {
            program: program.into(),
            args,
            timeout_ms,
            lock: Arc::default(),
        }
    }

    pub fn invoke(&self, input: &str) -> Result<String, ToolError> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ToolError::Transport(format!("spawn {}: {e}", self.program.display())))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            stdout.read_to_string(&mut buf).map(|_| buf)
        });
        if let Some(mut stdin) = child.stdin.take() {
            // A child that exits without reading stdin is not an error here.
            let _ = stdin.write_all(input.as_bytes());
        }

        let status = match child
            .wait_timeout(Duration::from_millis(self.timeout_ms))
            .map_err(|e| ToolError::Transport(e.to_string()))?
        {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ToolError::Timeout(self.timeout_ms));
            }
        };
        let output = reader
            .join()
            .map_err(|_| ToolError::Transport("stdout reader panicked".into()))?
            .map_err(|e| ToolError::Transport(e.to_string()))?;
        if !status.success() {
            return Err(ToolError::Transport(format!("exit status {status}")));
        }
        Ok(output.trim_end_matches(['\n', '\r']).to_string())
    }
}
