use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompts;
use crate::http::{join_url, JsonClient};

pub const LLM_API_KEY_VAR: &str = "AIBLOB_LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmOp {
    Themes,
    Queries,
    Score,
    Order,
}

impl LlmOp {
    pub fn as_str(self) -> &'static str {
        match self {
            LlmOp::Themes => "themes",
            LlmOp::Queries => "queries",
            LlmOp::Score => "score",
            LlmOp::Order => "order",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub op: LlmOp,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("replay script has no more `{}` responses", .0.as_str())]
    Exhausted(LlmOp),
    #[error("malformed response: {0}")]
    Malformed(String),
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<Value, ProviderError>;

    /// Providers whose answers depend on call order report `true`; callers
    /// then issue requests one at a time.
    fn sequential(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub op: LlmOp,
    pub response: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("replay line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Replays canned responses from a line-delimited script, one queue per op.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queues: Mutex<HashMap<LlmOp, VecDeque<Value>>>,
}

impl ScriptedProvider {
    pub fn new(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut queues: HashMap<LlmOp, VecDeque<Value>> = HashMap::new();
        for e in entries {
            queues.entry(e.op).or_default().push_back(e.response);
        }
        ScriptedProvider {
            queues: Mutex::new(queues),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ScriptError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ReplayEntry>(l).map_err(|e| ScriptError::Line {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(entries))
    }

    pub fn from_path(path: &Path) -> Result<Self, ScriptError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn remaining(&self, op: LlmOp) -> usize {
        self.queues
            .lock()
            .unwrap()
            .get(&op)
            .map_or(0, VecDeque::len)
    }
}

impl LlmProvider for ScriptedProvider {
    fn complete(&self, request: &LlmRequest) -> Result<Value, ProviderError> {
        self.queues
            .lock()
            .unwrap()
            .get_mut(&request.op)
            .and_then(VecDeque::pop_front)
            .ok_or(ProviderError::Exhausted(request.op))
    }

    fn sequential(&self) -> bool {
        true
    }
}

/// Wraps a provider and records every successful response as a replay script.
pub struct RecordingProvider<P> {
    inner: P,
    log: Mutex<Vec<ReplayEntry>>,
}

impl<P: LlmProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        self.log.lock().unwrap().clone()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries()
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }
}

impl<P: LlmProvider> LlmProvider for RecordingProvider<P> {
    fn complete(&self, request: &LlmRequest) -> Result<Value, ProviderError> {
        let response = self.inner.complete(request)?;
        self.log.lock().unwrap().push(ReplayEntry {
            op: request.op,
            response: response.clone(),
        });
        Ok(response)
    }

    fn sequential(&self) -> bool {
        true
    }
}

/// Chat-completion style HTTP provider. Posts to `<base_url>/chat/completions`
/// and expects the message content to be a JSON object.
pub struct RemoteLlm {
    client: JsonClient,
    url: String,
    model: String,
}

impl RemoteLlm {
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Self {
        RemoteLlm {
            client: JsonClient::new(api_key, Duration::from_secs(300)),
            url: join_url(base_url, "chat/completions"),
            model: model.into(),
        }
    }

    /// Reads the credential from `AIBLOB_LLM_API_KEY`.
    pub fn from_env(base_url: &str, model: impl Into<String>) -> Self {
        Self::new(base_url, model, std::env::var(LLM_API_KEY_VAR).ok())
    }
}

impl LlmProvider for RemoteLlm {
    fn complete(&self, request: &LlmRequest) -> Result<Value, ProviderError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": prompts::system_prompt(request.op)},
                {"role": "user", "content": serde_json::to_string_pretty(&request.payload).expect("payload serializes")},
            ],
        });
        let resp = self
            .client
            .post(&self.url, &body)
            .map_err(|e| ProviderError::Transport(e.0))?;
        let content = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Malformed("no message content".into()))?;
        let value: Value = serde_json::from_str(content.trim())
            .map_err(|e| ProviderError::Malformed(format!("content is not JSON: {e}")))?;
        if !value.is_object() {
            return Err(ProviderError::Malformed(
                "content is not a JSON object".into(),
            ));
        }
        Ok(value)
    }
}
