//! LLM backends, usage accounting and deterministic record/replay.
//!
//! Every agent call goes through [`Gateway::complete`], which forwards the
//! request to a pluggable [`LlmBackend`] and charges the returned token usage
//! to a [`UsageLedger`] under the calling agent and mutator.
//!
//! Three backends ship with the crate:
//! * [`LiveBackend`] talks to an OpenAI-compatible chat-completion endpoint.
//! * [`ReplayBackend`] serves responses from a transcript keyed by the
//!   canonical request hash; [`RecordingBackend`] produces such transcripts.
//! * [`ScriptedBackend`] pops responses from a queue, for unit tests.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::http::{send_with_retry, HttpRequest, HttpTransport, RetryFailure, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl SamplingParams {
    pub fn new(temperature: f64, max_output_tokens: u32) -> Self {
        Self {
            temperature,
            max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub params: SamplingParams,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => Err(LlmError::InvalidRequest(
                "first message must have the system role".into(),
            )),
            Some(_) => Ok(()),
        }
    }

    /// Stable serialization over model, messages and sampling parameters.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn hash(&self) -> String {
        crate::sha256_hex(self.canonical())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;
    fn add(self, rhs: Usage) -> Usage {
        Usage::new(
            self.input_tokens + rhs.input_tokens,
            self.output_tokens + rhs.output_tokens,
        )
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub usage: Usage,
}

impl LlmResponse {
    pub fn new(text: impl Into<String>, usage: Usage) -> Self {
        Self {
            text: text.into(),
            usage,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("LLM transport failure (status {status:?}): {message}")]
    Transport {
        status: Option<u16>,
        message: String,
        retriable: bool,
    },
    #[error("provider response malformed: {0}")]
    Provider(String),
    #[error("replay miss: no recorded response for request hash {hash}")]
    ReplayMiss { hash: String },
    #[error("scripted backend queue exhausted")]
    QueueExhausted,
    #[error("transcript hash collision on {hash}: distinct requests share one hash")]
    HashCollision { hash: String },
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

/// Serves responses from a programmed queue and remembers what was asked.
#[derive(Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<LlmResponse>>,
    seen: Mutex<Vec<LlmRequest>>,
}

impl ScriptedBackend {
    pub fn new(responses: impl IntoIterator<Item = LlmResponse>) -> Self {
        Self {
            queue: Mutex::new(responses.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Convenience: every response charged with the same usage.
    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>, usage: Usage) -> Self {
        Self::new(texts.into_iter().map(|t| LlmResponse::new(t, usage)))
    }

    /// Loads one JSON `LlmResponse` per line.
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut responses = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: LlmResponse = serde_json::from_str(line).map_err(|e| LlmError::Transcript {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", idx + 1),
            })?;
            responses.push(r);
        }
        Ok(Self::new(responses))
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.seen.lock().expect("scripted log").clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("scripted queue").len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        self.seen.lock().expect("scripted log").push(request.clone());
        self.queue
            .lock()
            .expect("scripted queue")
            .pop_front()
            .ok_or(LlmError::QueueExhausted)
    }
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub canonical_request: LlmRequest,
    pub response: String,
    pub usage: Usage,
}

impl TranscriptEntry {
    pub fn new(request: &LlmRequest, response: &LlmResponse) -> Self {
        Self {
            request_hash: request.hash(),
            canonical_request: request.clone(),
            response: response.text.clone(),
            usage: response.usage,
        }
    }
}

fn index_entries(
    entries: impl IntoIterator<Item = TranscriptEntry>,
) -> Result<HashMap<String, TranscriptEntry>, LlmError> {
    let mut map: HashMap<String, TranscriptEntry> = HashMap::new();
    for entry in entries {
        match map.get(&entry.request_hash) {
            Some(prev) if prev.canonical_request != entry.canonical_request => {
                return Err(LlmError::HashCollision {
                    hash: entry.request_hash,
                })
            }
            // First recording wins; identical requests replay identically.
            Some(_) => {}
            None => {
                map.insert(entry.request_hash.clone(), entry);
            }
        }
    }
    Ok(map)
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, LlmError> {
    let file = File::open(path).map_err(|e| LlmError::Transcript {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LlmError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry =
            serde_json::from_str(&line).map_err(|e| LlmError::Transcript {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", idx + 1),
            })?;
        out.push(entry);
    }
    Ok(out)
}

pub struct ReplayBackend {
    entries: HashMap<String, TranscriptEntry>,
}

impl ReplayBackend {
    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Result<Self, LlmError> {
        Ok(Self {
            entries: index_entries(entries)?,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Opens a transcript produced by [`RecordingBackend`] for replay.
pub fn open_replay(path: &Path) -> Result<ReplayBackend, LlmError> {
    ReplayBackend::from_entries(read_transcript(path)?)
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let hash = request.hash();
        match self.entries.get(&hash) {
            Some(entry) if entry.canonical_request == *request => {
                Ok(LlmResponse::new(entry.response.clone(), entry.usage))
            }
            Some(_) => Err(LlmError::HashCollision { hash }),
            None => Err(LlmError::ReplayMiss { hash }),
        }
    }
}

/// Wraps a backend and appends every exchange to a transcript file.
pub struct RecordingBackend {
    inner: Arc<dyn LlmBackend>,
    path: PathBuf,
    state: Mutex<(File, HashMap<String, LlmRequest>)>,
}

/// Starts recording `inner` into `path` (appending to any existing transcript).
pub fn record_transcript(inner: Arc<dyn LlmBackend>, path: &Path) -> Result<RecordingBackend, LlmError> {
    let existing = if path.exists() {
        read_transcript(path)?
    } else {
        Vec::new()
    };
    let known = index_entries(existing)?
        .into_iter()
        .map(|(h, e)| (h, e.canonical_request))
        .collect();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| LlmError::Transcript {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        }
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| LlmError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(RecordingBackend {
        inner,
        path: path.to_path_buf(),
        state: Mutex::new((file, known)),
    })
}

impl LlmBackend for RecordingBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let entry = TranscriptEntry::new(request, &response);
        let mut state = self.state.lock().expect("recorder lock");
        let (file, known) = &mut *state;
        match known.get(&entry.request_hash) {
            Some(prev) if prev != request => {
                return Err(LlmError::HashCollision {
                    hash: entry.request_hash,
                })
            }
            Some(_) => return Ok(response),
            None => {}
        }
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|e| LlmError::Transcript {
                path: self.path.clone(),
                message: e.to_string(),
            })?;
        known.insert(entry.request_hash, request.clone());
        Ok(response)
    }
}

/// OpenAI-compatible chat-completion client.
pub struct LiveBackend {
    pub transport: Arc<dyn HttpTransport>,
    pub endpoint: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
}

impl LiveBackend {
    pub fn new(transport: Arc<dyn HttpTransport>, endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            transport,
            endpoint: endpoint.into(),
            api_key,
            retry: RetryPolicy {
                attempts: 3,
                base_delay: Duration::from_secs(1),
            },
        }
    }

    pub fn request_body(request: &LlmRequest) -> Value {
        json!({
            "model": request.model_id,
            "messages": request.messages.iter().map(|m| json!({
                "role": m.role.as_str(),
                "content": m.text,
            })).collect::<Vec<_>>(),
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        })
    }

    pub fn parse_response(body: &str) -> Result<LlmResponse, LlmError> {
        let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Provider(e.to_string()))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::Provider("missing choices[0].message.content".into()))?;
        let tokens = |p: &str| {
            v.pointer(p)
                .and_then(Value::as_u64)
                .ok_or_else(|| LlmError::Provider(format!("missing {p}")))
        };
        Ok(LlmResponse::new(
            text,
            Usage::new(tokens("/usage/prompt_tokens")?, tokens("/usage/completion_tokens")?),
        ))
    }
}

impl LlmBackend for LiveBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let mut http = HttpRequest::post(&self.endpoint, Self::request_body(request).to_string());
        if let Some(key) = &self.api_key {
            http = http.header("Authorization", format!("Bearer {key}"));
        }
        let resp = send_with_retry(self.transport.as_ref(), &http, self.retry).map_err(|f| match f {
            RetryFailure::Transport(e) => LlmError::Transport {
                status: None,
                message: e.message,
                retriable: true,
            },
            RetryFailure::Status(r) => LlmError::Transport {
                status: Some(r.status),
                message: r.body,
                retriable: true,
            },
        })?;
        if !resp.is_success() {
            return Err(LlmError::Transport {
                status: Some(resp.status),
                message: resp.body,
                retriable: false,
            });
        }
        Self::parse_response(&resp.body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Invention,
    Synthesis,
    Refinement,
}

impl Agent {
    pub fn as_str(self) -> &'static str {
        match self {
            Agent::Invention => "invention",
            Agent::Synthesis => "synthesis",
            Agent::Refinement => "refinement",
        }
    }
}

/// Currency per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            input_per_million: 0.0,
            output_per_million: 0.0,
        }
    }
}

/// `input·input_rate + output·output_rate`, rates quoted per million tokens.
pub fn cost(usage: Usage, rates: Rates) -> f64 {
    (usage.input_tokens as f64 * rates.input_per_million
        + usage.output_tokens as f64 * rates.output_per_million)
        / 1_000_000.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub total: Usage,
    pub per_agent: BTreeMap<Agent, Usage>,
    pub per_mutator: BTreeMap<String, Usage>,
    pub calls: u64,
}

/// Thread-safe cumulative token accounting.
#[derive(Debug, Default)]
pub struct UsageLedger {
    state: Mutex<LedgerSnapshot>,
    rates: Rates,
}

impl UsageLedger {
    pub fn new(rates: Rates) -> Self {
        Self {
            state: Mutex::new(LedgerSnapshot::default()),
            rates,
        }
    }

    pub fn record(&self, agent: Agent, mutator_id: &str, usage: Usage) {
        let mut s = self.state.lock().expect("ledger lock");
        s.total += usage;
        *s.per_agent.entry(agent).or_default() += usage;
        *s.per_mutator.entry(mutator_id.to_string()).or_default() += usage;
        s.calls += 1;
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.state.lock().expect("ledger lock").clone()
    }

    pub fn total(&self) -> Usage {
        self.state.lock().expect("ledger lock").total
    }

    pub fn mutator_usage(&self, mutator_id: &str) -> Usage {
        self.state
            .lock()
            .expect("ledger lock")
            .per_mutator
            .get(mutator_id)
            .copied()
            .unwrap_or_default()
    }

    pub fn rates(&self) -> Rates {
        self.rates
    }

    pub fn cost(&self) -> f64 {
        cost(self.total(), self.rates)
    }
}

/// Per-mutator token totals as persisted after a forge run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub mutator_id: String,
    pub usage: Usage,
}

impl crate::store::Keyed for UsageRecord {
    fn key(&self) -> &str {
        &self.mutator_id
    }
}

impl LedgerSnapshot {
    pub fn usage_records(&self) -> Vec<UsageRecord> {
        self.per_mutator
            .iter()
            .map(|(id, u)| UsageRecord {
                mutator_id: id.clone(),
                usage: *u,
            })
            .collect()
    }
}

/// Backend plus ledger: the single entry point agents use.
#[derive(Clone)]
pub struct Gateway {
    pub backend: Arc<dyn LlmBackend>,
    pub ledger: Arc<UsageLedger>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>, ledger: Arc<UsageLedger>) -> Self {
        Self { backend, ledger }
    }

    pub fn complete(
        &self,
        agent: Agent,
        mutator_id: &str,
        request: &LlmRequest,
    ) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let response = self.backend.complete(request)?;
        self.ledger.record(agent, mutator_id, response.usage);
        Ok(response)
    }
}
