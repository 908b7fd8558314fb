//! Generation providers and the embedding client.
//!
//! Remote providers speak the chat-completions JSON contract:
//!
//! ```text
//! POST {endpoint}
//! {"model": ..., "messages": [{"role": "user", "content": ...}], "temperature": ..., "max_tokens": ...}
//! -> {"choices": [{"message": {"content": ...}}], "usage": {...}}
//! ```
//!
//! and embeddings use `{"model": ..., "input": [...]}` ->
//! `{"data": [{"embedding": [...]}, ...]}`. All HTTP goes through a
//! [`Transport`], so tests and offline runs can replay recorded cassettes
//! (see [`CassetteTransport`]) instead of touching the network.

use std::collections::{HashMap, VecDeque};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::LeveledPair;
use crate::prompting::PromptBundle;
use crate::textproc;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

const TEXT_START: &str = "[TEXT START]";
const TEXT_END: &str = "[TEXT END]";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("cassette error: {0}")]
    Cassette(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Chat,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry `i` (1-based) is `backoff_ms[min(i, len) - 1]`.
    #[serde(default)]
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: vec![500, 1000, 2000],
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_attempts < 1 {
            return Err(ProviderError::Config("max_attempts must be at least 1".into()));
        }
        if self.backoff_ms.windows(2).any(|w| w[1] < w[0]) {
            return Err(ProviderError::Config("backoff schedule must be non-decreasing".into()));
        }
        Ok(())
    }

    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        if self.backoff_ms.is_empty() || retry == 0 {
            return Duration::ZERO;
        }
        let idx = (retry as usize).min(self.backoff_ms.len()) - 1;
        Duration::from_millis(self.backoff_ms[idx])
    }
}

fn default_context_limit() -> usize {
    8192
}
fn default_max_output() -> usize {
    1024
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_id: String,
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: usize,
    /// Not reported for any of the benchmarked models; 0 keeps runs
    /// repeatable.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockScript>,
}

impl ProviderConfig {
    pub fn mock(name: &str, script: MockScript) -> Self {
        Self {
            name: name.to_string(),
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model_id: "mock".into(),
            context_limit: default_context_limit(),
            max_output_tokens: default_max_output(),
            temperature: 0.0,
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy {
                max_attempts: 1,
                backoff_ms: Vec::new(),
            },
            auth_env: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            mock: Some(script),
        }
    }

    pub fn chat(name: &str, endpoint: &str, model_id: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ProviderKind::Chat,
            endpoint: endpoint.to_string(),
            model_id: model_id.to_string(),
            context_limit: default_context_limit(),
            max_output_tokens: default_max_output(),
            temperature: 0.0,
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy::default(),
            auth_env: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            mock: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.name.is_empty() {
            return Err(ProviderError::Config("provider name is empty".into()));
        }
        if self.context_limit == 0 {
            return Err(ProviderError::Config(format!("{}: context_limit must be positive", self.name)));
        }
        if self.max_in_flight == 0 {
            return Err(ProviderError::Config(format!("{}: max_in_flight must be positive", self.name)));
        }
        self.retry.validate()?;
        match self.kind {
            ProviderKind::Chat if self.endpoint.is_empty() => {
                Err(ProviderError::Config(format!("{}: chat provider needs an endpoint", self.name)))
            }
            ProviderKind::Mock if self.mock.is_none() => {
                Err(ProviderError::Config(format!("{}: mock provider needs a script", self.name)))
            }
            _ => Ok(()),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Reads the bearer token, failing before any request is made when the
    /// named variable is unset or empty.
    pub fn resolve_auth(&self) -> Result<Option<String>, ProviderError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(ProviderError::Config(format!(
                    "{}: auth variable {var} is not set",
                    self.name
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Ok,
    ContextOverflow,
    ProviderError,
    Timeout,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub output_text: Option<String>,
    pub status: GenerationStatus,
    pub latency_ms: u64,
    pub attempt_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_usage: Option<Usage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationResult {
    pub fn is_ok(&self) -> bool {
        self.status == GenerationStatus::Ok
    }

    fn failed(status: GenerationStatus, attempts: u32, started: Instant, error: String) -> Self {
        Self {
            output_text: None,
            status,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: attempts,
            raw_usage: None,
            error: Some(error),
        }
    }
}

/// One call's worth of context. `pair` gives mocks access to the gold
/// record; real providers only look at the prompt.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a PromptBundle,
    pub pair: &'a LeveledPair,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttemptOutcome {
    Success { text: String, usage: Option<Usage> },
    Retryable { status: GenerationStatus, message: String },
    Terminal { message: String },
}

pub trait Provider: Send + Sync {
    fn config(&self) -> &ProviderConfig;

    /// A single request, without budget checks or retries.
    fn attempt(&self, req: &GenerationRequest<'_>) -> AttemptOutcome;

    fn name(&self) -> &str {
        &self.config().name
    }
}

/// Removes lines consisting only of a `[TEXT START]` or `[TEXT END]`
/// marker, then trims surrounding whitespace. Markers inside a line are
/// left alone.
pub fn strip_markers(text: &str) -> String {
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            let t = l.trim();
            t != TEXT_START && t != TEXT_END
        })
        .collect();
    kept.join("\n").trim().to_string()
}

/// Budget check, then up to `max_attempts` requests with backoff. Remote
/// failures are encoded in the result status, never returned as errors.
pub fn generate(provider: &dyn Provider, req: &GenerationRequest<'_>) -> GenerationResult {
    let cfg = provider.config();
    let started = Instant::now();
    if req.prompt.estimated_tokens > cfg.context_limit {
        return GenerationResult::failed(
            GenerationStatus::ContextOverflow,
            0,
            started,
            format!(
                "prompt needs ~{} tokens, context limit is {}",
                req.prompt.estimated_tokens, cfg.context_limit
            ),
        );
    }
    let max_attempts = cfg.retry.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match provider.attempt(req) {
            AttemptOutcome::Success { text, usage } => {
                let cleaned = strip_markers(&text);
                if cleaned.is_empty() {
                    return GenerationResult::failed(
                        GenerationStatus::ProviderError,
                        attempt,
                        started,
                        "empty response text".into(),
                    );
                }
                return GenerationResult {
                    output_text: Some(cleaned),
                    status: GenerationStatus::Ok,
                    latency_ms: started.elapsed().as_millis() as u64,
                    attempt_count: attempt,
                    raw_usage: usage,
                    error: None,
                };
            }
            AttemptOutcome::Terminal { message } => {
                return GenerationResult::failed(GenerationStatus::ProviderError, attempt, started, message);
            }
            AttemptOutcome::Retryable { status, message } => {
                if attempt >= max_attempts {
                    return GenerationResult::failed(status, attempt, started, message);
                }
                tracing::debug!(provider = %cfg.name, attempt, %message, "retrying");
                std::thread::sleep(cfg.retry.delay_before_retry(attempt));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Transport

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Other(String),
}

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP over `ureq`. HTTP error statuses are returned as responses,
/// not errors, so callers can apply their own retry rules.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let payload = serde_json::to_string(body).map_err(|e| TransportError::Other(e.to_string()))?;
        let mut resp = req.send(payload.as_bytes()).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(map_ureq_error)?;
        Ok(HttpResponse { status, body })
    }
}

fn map_ureq_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => TransportError::Connect(e.to_string()),
        ureq::Error::Io(io) => TransportError::Connect(io.to_string()),
        other => TransportError::Other(other.to_string()),
    }
}

/// One recorded exchange. A cassette file is JSONL with one of these per
/// line, in recording order:
///
/// `{"url": "<endpoint>", "request": <request JSON>, "status": <u16>, "body": "<raw response text>"}`
///
/// Replay matches on `url` plus structural equality of `request`. Repeated
/// identical requests replay their recordings in order and then keep
/// returning the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub url: String,
    pub request: Value,
    pub status: u16,
    pub body: String,
}

fn cassette_key(url: &str, request: &Value) -> String {
    format!("{url}\n{request}")
}

#[derive(Debug, Default)]
pub struct CassetteTransport {
    entries: Mutex<HashMap<String, VecDeque<CassetteEntry>>>,
}

impl CassetteTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let mut map: HashMap<String, VecDeque<CassetteEntry>> = HashMap::new();
        for e in entries {
            map.entry(cassette_key(&e.url, &e.request)).or_default().push_back(e);
        }
        Self {
            entries: Mutex::new(map),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ProviderError::Cassette(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Cassette(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                ProviderError::Cassette(format!("{} line {}: {e}", path.display(), idx + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }
}

impl Transport for CassetteTransport {
    fn post_json(
        &self,
        url: &str,
        _bearer: Option<&str>,
        body: &Value,
        _timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut entries = self.entries.lock().expect("cassette lock poisoned");
        let queue = entries
            .get_mut(&cassette_key(url, body))
            .ok_or_else(|| TransportError::Other(format!("no cassette entry for request to {url}")))?;
        let entry = if queue.len() > 1 {
            queue.pop_front().expect("queue is non-empty")
        } else {
            queue.front().cloned().expect("queue is non-empty")
        };
        Ok(HttpResponse {
            status: entry.status,
            body: entry.body,
        })
    }
}

/// Forwards to an inner transport and appends every exchange to a cassette
/// file.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    path: PathBuf,
    lock: Mutex<()>,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl Transport for RecordingTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let resp = self.inner.post_json(url, bearer, body, timeout)?;
        let entry = CassetteEntry {
            url: url.to_string(),
            request: body.clone(),
            status: resp.status,
            body: resp.body.clone(),
        };
        let _guard = self.lock.lock().expect("recorder lock poisoned");
        let line = serde_json::to_string(&entry).map_err(|e| TransportError::Other(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| TransportError::Other(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(resp)
    }
}

/// Transport that refuses every request; the default when live calls are
/// not enabled.
#[derive(Debug, Default)]
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn post_json(&self, url: &str, _: Option<&str>, _: &Value, _: Duration) -> Result<HttpResponse, TransportError> {
        Err(TransportError::Connect(format!(
            "live network calls are disabled (request to {url})"
        )))
    }
}

// ---------------------------------------------------------------------------
// Chat-completions provider

pub struct ChatProvider {
    cfg: ProviderConfig,
    transport: Arc<dyn Transport>,
    token: Option<String>,
}

impl ChatProvider {
    pub fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let token = cfg.resolve_auth()?;
        Ok(Self { cfg, transport, token })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        })
    }
}

fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl Provider for ChatProvider {
    fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn attempt(&self, req: &GenerationRequest<'_>) -> AttemptOutcome {
        let body = self.request_body(&req.prompt.rendered_text);
        let resp = match self.transport.post_json(
            &self.cfg.endpoint,
            self.token.as_deref(),
            &body,
            self.cfg.timeout(),
        ) {
            Ok(r) => r,
            Err(TransportError::Timeout) => {
                return AttemptOutcome::Retryable {
                    status: GenerationStatus::Timeout,
                    message: "request timed out".into(),
                }
            }
            Err(e) => return AttemptOutcome::Terminal { message: e.to_string() },
        };
        if is_retryable_status(resp.status) {
            return AttemptOutcome::Retryable {
                status: GenerationStatus::ProviderError,
                message: format!("HTTP {}", resp.status),
            };
        }
        if !(200..300).contains(&resp.status) {
            return AttemptOutcome::Terminal {
                message: format!("HTTP {}: {}", resp.status, truncate(&resp.body, 200)),
            };
        }
        let parsed: Value = match serde_json::from_str(&resp.body) {
            Ok(v) => v,
            Err(e) => {
                return AttemptOutcome::Terminal {
                    message: format!("response is not JSON: {e}"),
                }
            }
        };
        let Some(text) = parsed
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
        else {
            return AttemptOutcome::Terminal {
                message: "response lacks choices[0].message.content".into(),
            };
        };
        let usage = parsed.get("usage").map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64),
        });
        AttemptOutcome::Success {
            text: text.to_string(),
            usage,
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

// ---------------------------------------------------------------------------
// Mock provider

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPredicate {
    Any,
    Contains(String),
    PairId(String),
}

impl PromptPredicate {
    fn matches(&self, req: &GenerationRequest<'_>) -> bool {
        match self {
            PromptPredicate::Any => true,
            PromptPredicate::Contains(s) => req.prompt.rendered_text.contains(s.as_str()),
            PromptPredicate::PairId(id) => &req.pair.pair_id == id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockResponse {
    /// The gold target text of the pair.
    Oracle,
    /// The pair's source text, unchanged.
    EchoSource,
    Text(String),
    /// A retryable failure, as if the server returned 503.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub when: PromptPredicate,
    pub respond: MockResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn always(respond: MockResponse) -> Self {
        Self {
            rules: vec![MockRule {
                when: PromptPredicate::Any,
                respond,
            }],
        }
    }

    pub fn oracle() -> Self {
        Self::always(MockResponse::Oracle)
    }

    pub fn echo_source() -> Self {
        Self::always(MockResponse::EchoSource)
    }
}

/// Scripted provider for tests and dry runs. Rules are tried in order; the
/// first match answers. Every prompt it sees is logged.
pub struct MockProvider {
    cfg: ProviderConfig,
    script: MockScript,
    log: Mutex<Vec<String>>,
}

impl MockProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let script = cfg.mock.clone().unwrap_or_default();
        Ok(Self {
            cfg,
            script,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn with_script(name: &str, script: MockScript) -> Self {
        Self::new(ProviderConfig::mock(name, script)).expect("mock config is valid")
    }

    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log poisoned").len()
    }
}

impl Provider for MockProvider {
    fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn attempt(&self, req: &GenerationRequest<'_>) -> AttemptOutcome {
        self.log
            .lock()
            .expect("mock log poisoned")
            .push(req.prompt.rendered_text.clone());
        let Some(rule) = self.script.rules.iter().find(|r| r.when.matches(req)) else {
            return AttemptOutcome::Terminal {
                message: "no mock rule matched the prompt".into(),
            };
        };
        let text = match &rule.respond {
            MockResponse::Oracle => req.pair.target_text.clone(),
            MockResponse::EchoSource => req.pair.source_text.clone(),
            MockResponse::Text(t) => t.clone(),
            MockResponse::Fail => {
                return AttemptOutcome::Retryable {
                    status: GenerationStatus::ProviderError,
                    message: "scripted failure".into(),
                }
            }
        };
        AttemptOutcome::Success { text, usage: None }
    }
}

/// Builds the provider a config describes. Chat providers use `transport`.
pub fn build_provider(
    cfg: &ProviderConfig,
    transport: Arc<dyn Transport>,
) -> Result<Arc<dyn Provider>, ProviderError> {
    Ok(match cfg.kind {
        ProviderKind::Chat => Arc::new(ChatProvider::new(cfg.clone(), transport)?),
        ProviderKind::Mock => Arc::new(MockProvider::new(cfg.clone())?),
    })
}

// ---------------------------------------------------------------------------
// Embeddings

pub trait Embedder: Send + Sync {
    /// One L2-normalized vector per input, all of the same dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Calls an embedding endpoint: `{"model", "input": [...]}` ->
/// `{"data": [{"embedding": [...]}, ...]}`.
pub fn embed(
    texts: &[String],
    cfg: &ProviderConfig,
    transport: &dyn Transport,
) -> Result<Vec<Vec<f64>>, ProviderError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let token = cfg.resolve_auth()?;
    let body = json!({"model": cfg.model_id, "input": texts});
    let resp = transport
        .post_json(&cfg.endpoint, token.as_deref(), &body, cfg.timeout())
        .map_err(|e| ProviderError::Provider(e.to_string()))?;
    if !(200..300).contains(&resp.status) {
        return Err(ProviderError::Provider(format!("embedding HTTP {}", resp.status)));
    }
    let parsed: Value =
        serde_json::from_str(&resp.body).map_err(|e| ProviderError::Provider(format!("bad embedding JSON: {e}")))?;
    let data = parsed
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Provider("embedding response lacks data".into()))?;
    if data.len() != texts.len() {
        return Err(ProviderError::Provider(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(data.len());
    for item in data {
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Provider("embedding entry lacks a vector".into()))?;
        let mut v = values
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ProviderError::Provider("non-numeric embedding value".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        l2_normalize(&mut v);
        out.push(v);
    }
    let dim = out[0].len();
    if out.iter().any(|v| v.len() != dim) || dim == 0 {
        return Err(ProviderError::Provider("embedding dimension mismatch within batch".into()));
    }
    Ok(out)
}

pub struct HttpEmbedder {
    cfg: ProviderConfig,
    transport: Arc<dyn Transport>,
}

impl HttpEmbedder {
    pub fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, ProviderError> {
        if cfg.endpoint.is_empty() {
            return Err(ProviderError::Config("embedding endpoint is empty".into()));
        }
        cfg.resolve_auth()?;
        Ok(Self { cfg, transport })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        embed(texts, &self.cfg, self.transport.as_ref())
    }
}

/// Embedding-free fallback: hashed character trigrams plus whole-word
/// features. Vectors are non-negative, so cosines fall in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LexicalEmbedder {
    dim: usize,
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        Self { dim: 512 }
    }
}

impl LexicalEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    fn bucket(&self, feature: &str) -> usize {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in feature.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in textproc::word_tokens(text) {
            v[self.bucket(&format!("w:{token}"))] += 1.0;
            let padded: Vec<char> = format!(" {token} ").chars().collect();
            for tri in padded.windows(3) {
                let s: String = tri.iter().collect();
                v[self.bucket(&format!("c:{s}"))] += 0.5;
            }
        }
        l2_normalize(&mut v);
        v
    }
}

impl Embedder for LexicalEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
