//! Chat-completion gateway: a uniform request type, a deterministic
//! scripted backend, and an HTTP backend speaking the common
//! `messages` in / `choices[0].message.content` out wire shape.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 5500;
pub const API_BASE_ENV: &str = "MEDACTION_API_BASE";
pub const API_KEY_ENV: &str = "MEDACTION_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayErrorKind {
    Auth,
    RateLimitedExhausted,
    MalformedResponse,
    Network,
    ScriptMiss,
    InvalidRequest,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RateLimitedExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("no scripted reply for {0}")]
    ScriptMiss(ScriptKey),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn kind(&self) -> GatewayErrorKind {
        match self {
            GatewayError::Auth(_) => GatewayErrorKind::Auth,
            GatewayError::RateLimitedExhausted { .. } => GatewayErrorKind::RateLimitedExhausted,
            GatewayError::MalformedResponse(_) => GatewayErrorKind::MalformedResponse,
            GatewayError::Network(_) => GatewayErrorKind::Network,
            GatewayError::ScriptMiss(_) => GatewayErrorKind::ScriptMiss,
            GatewayError::InvalidRequest(_) => GatewayErrorKind::InvalidRequest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Sampling parameters shared by every agent call in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>, params: SamplingParams) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: params.temperature,
            max_output_tokens: params.max_output_tokens,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("no messages".into()))?;
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest("first message must be system or user".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn to_wire_json(&self) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.model_id,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        });
        if let Some(seed) = self.seed {
            body["seed"] = seed.into();
        }
        body
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions body.
pub fn parse_wire_response(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::MalformedResponse(format!("body is not JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

/// What a request is for. Scripted backends key on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    #[default]
    Agent,
    Oracle,
    ExtractTests,
    ExtractCase,
    MatchTests,
    JudgeDiagnosis,
}

/// Where a request comes from in the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RequestContext {
    pub purpose: Purpose,
    pub case_id: String,
    pub branch_id: String,
    pub turn_index: u32,
    pub attempt: u32,
}

impl RequestContext {
    pub fn agent(case_id: &str, branch_id: &str, turn_index: u32) -> Self {
        Self {
            purpose: Purpose::Agent,
            case_id: case_id.to_owned(),
            branch_id: branch_id.to_owned(),
            turn_index,
            attempt: 0,
        }
    }

    pub fn with_purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = purpose;
        self
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest, ctx: &RequestContext) -> Result<String, GatewayError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest, &RequestContext) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest, ctx: &RequestContext) -> Result<String, GatewayError> {
        self(req, ctx)
    }
}

// ---------------------------------------------------------------------------
// Scripted backend

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScriptKey {
    pub purpose: Purpose,
    pub case_id: String,
    pub branch_id: String,
    pub turn_index: u32,
    pub attempt: u32,
}

impl fmt::Display for ScriptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:?}, case={}, branch={}, turn={}, attempt={})",
            self.purpose, self.case_id, self.branch_id, self.turn_index, self.attempt
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub purpose: Purpose,
    pub case_id: String,
    #[serde(default = "wildcard")]
    pub branch: String,
    pub turn: u32,
    #[serde(default)]
    pub attempt: u32,
    pub reply: String,
}

fn wildcard() -> String {
    "*".to_owned()
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("script line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate script entry {0}")]
    Duplicate(ScriptKey),
}

/// Deterministic backend answering from a table keyed by
/// `(purpose, case_id, branch_id, turn_index, attempt)`.
///
/// Lookup falls back from the exact branch to the `*` wildcard branch,
/// and from a retry attempt to attempt 0, so scripts only spell out the
/// replies that differ.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<ScriptKey, String>,
}

impl ScriptedBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, ScriptError> {
        let mut replies = BTreeMap::new();
        for e in entries {
            let key = ScriptKey {
                purpose: e.purpose,
                case_id: e.case_id,
                branch_id: e.branch,
                turn_index: e.turn,
                attempt: e.attempt,
            };
            if replies.contains_key(&key) {
                return Err(ScriptError::Duplicate(key));
            }
            replies.insert(key, e.reply);
        }
        Ok(Self { replies })
    }

    /// Loads a script file: `.json` holds `{"entries": [...]}` or a bare
    /// array of entries, anything else uses the text format parsed by
    /// [`parse_script_text`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let entries = if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            #[serde(untagged)]
            enum Doc {
                Wrapped { entries: Vec<ScriptEntry> },
                Bare(Vec<ScriptEntry>),
            }
            match serde_json::from_str(&text)? {
                Doc::Wrapped { entries } | Doc::Bare(entries) => entries,
            }
        } else {
            parse_script_text(&text)?
        };
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    pub fn lookup(&self, ctx: &RequestContext) -> Result<&str, GatewayError> {
        let key = |branch: &str, attempt: u32| ScriptKey {
            purpose: ctx.purpose,
            case_id: ctx.case_id.clone(),
            branch_id: branch.to_owned(),
            turn_index: ctx.turn_index,
            attempt,
        };
        let mut probes = vec![key(&ctx.branch_id, ctx.attempt)];
        if ctx.attempt != 0 {
            probes.push(key(&ctx.branch_id, 0));
        }
        probes.push(key("*", ctx.attempt));
        if ctx.attempt != 0 {
            probes.push(key("*", 0));
        }
        probes
            .iter()
            .find_map(|k| self.replies.get(k))
            .map(String::as_str)
            .ok_or_else(|| GatewayError::ScriptMiss(probes.swap_remove(0)))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest, ctx: &RequestContext) -> Result<String, GatewayError> {
        req.validate()?;
        self.lookup(ctx).map(str::to_owned)
    }
}

/// Parses the text script format:
///
/// ```text
/// === case=toy_anemia branch=* turn=1
/// ### Chain of Thought:
/// ...
/// === case=toy_anemia branch=teacher-A.r1 turn=2 attempt=1 purpose=agent
/// ...
/// ```
///
/// Each `=== ` header starts an entry whose reply is every following line
/// up to the next header, with surrounding blank lines trimmed. Lines
/// before the first header that start with `//` are comments.
pub fn parse_script_text(text: &str) -> Result<Vec<ScriptEntry>, ScriptError> {
    let mut entries = Vec::new();
    let mut current: Option<(ScriptEntry, Vec<&str>)> = None;
    let finish = |cur: Option<(ScriptEntry, Vec<&str>)>, out: &mut Vec<ScriptEntry>| {
        if let Some((mut e, lines)) = cur {
            e.reply = lines.join("\n").trim_matches('\n').trim_end().to_owned();
            out.push(e);
        }
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(header) = line.strip_prefix("=== ") {
            finish(current.take(), &mut entries);
            let mut entry = ScriptEntry {
                purpose: Purpose::Agent,
                case_id: String::new(),
                branch: wildcard(),
                turn: 0,
                attempt: 0,
                reply: String::new(),
            };
            for field in header.split_whitespace() {
                let (k, v) = field.split_once('=').ok_or_else(|| ScriptError::Syntax {
                    line: line_no,
                    message: format!("expected key=value, got {field:?}"),
                })?;
                let bad = |m: String| ScriptError::Syntax { line: line_no, message: m };
                match k {
                    "case" => entry.case_id = v.to_owned(),
                    "branch" => entry.branch = v.to_owned(),
                    "turn" => entry.turn = v.parse().map_err(|_| bad(format!("bad turn {v:?}")))?,
                    "attempt" => entry.attempt = v.parse().map_err(|_| bad(format!("bad attempt {v:?}")))?,
                    "purpose" => {
                        entry.purpose = serde_json::from_value(serde_json::Value::String(v.to_owned()))
                            .map_err(|_| bad(format!("unknown purpose {v:?}")))?
                    }
                    other => return Err(bad(format!("unknown key {other:?}"))),
                }
            }
            if entry.case_id.is_empty() {
                return Err(ScriptError::Syntax {
                    line: line_no,
                    message: "header without case=".into(),
                });
            }
            current = Some((entry, Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        } else if !line.trim().is_empty() && !line.starts_with("//") {
            return Err(ScriptError::Syntax {
                line: line_no,
                message: "text before first === header".into(),
            });
        }
    }
    finish(current, &mut entries);
    Ok(entries)
}

// ---------------------------------------------------------------------------
// HTTP backend

/// Exponential backoff with seeded multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_delay_ms: u64,
    pub max_attempts: u32,
    /// Each delay is scaled by `1 - jitter * u` with `u` uniform in [0, 1).
    pub jitter: f64,
    pub jitter_seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay_ms: 1_000,
            factor: 2.0,
            max_delay_ms: 60_000,
            max_attempts: 6,
            jitter: 0.2,
            jitter_seed: 0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based), without jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        let raw = self.base_delay_ms as f64 * self.factor.powi(retry.saturating_sub(1) as i32);
        Duration::from_millis(raw.min(self.max_delay_ms as f64) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub timeout: bool,
    pub message: String,
}

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply, TransportError>;
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct InFlightLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            available: Mutex::new(max_in_flight.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        InFlightPermit { limit: self }
    }
}

pub struct InFlightPermit<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.limit.available.lock().expect("limiter poisoned") += 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptRecord {
    pub attempt: u32,
    /// HTTP status, or `None` for a transport failure.
    pub status: Option<u16>,
    pub delay_before: Duration,
}

#[derive(Debug, Default)]
pub struct GatewayCounters {
    pub requests: AtomicU64,
    pub attempts: AtomicU64,
    pub failures: AtomicU64,
}

pub struct HttpBackend<T: Transport> {
    url: String,
    api_key: Option<String>,
    policy: RetryPolicy,
    transport: T,
    sleeper: Box<dyn Sleeper>,
    limit: std::sync::Arc<InFlightLimit>,
    jitter: Mutex<ChaCha8Rng>,
    pub counters: GatewayCounters,
}

/// Appends `/chat/completions` to a base URL unless already present.
pub fn completions_url(base: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_owned()
    } else {
        format!("{base}/chat/completions")
    }
}

impl<T: Transport> HttpBackend<T> {
    pub fn new(url: impl Into<String>, api_key: Option<String>, policy: RetryPolicy, transport: T) -> Self {
        Self {
            url: url.into(),
            api_key,
            policy,
            transport,
            sleeper: Box::new(ThreadSleeper),
            limit: std::sync::Arc::new(InFlightLimit::new(4)),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(policy.jitter_seed)),
            counters: GatewayCounters::default(),
        }
    }

    pub fn with_sleeper(mut self, sleeper: impl Sleeper + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    pub fn with_limit(mut self, limit: std::sync::Arc<InFlightLimit>) -> Self {
        self.limit = limit;
        self
    }

    fn jittered(&self, retry: u32) -> Duration {
        let nominal = self.policy.nominal_delay(retry);
        let u: f64 = self.jitter.lock().expect("jitter rng poisoned").random();
        nominal.mul_f64((1.0 - self.policy.jitter * u).clamp(0.0, 1.0))
    }

    /// Sends one request with retries; returns the reply and the attempt log.
    pub fn send_logged(&self, req: &ChatRequest) -> (Result<String, GatewayError>, Vec<AttemptRecord>) {
        let mut log = Vec::new();
        if let Err(e) = req.validate() {
            return (Err(e), log);
        }
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let body = req.to_wire_json().to_string();
        let _permit = self.limit.acquire();
        let mut delay = Duration::ZERO;
        let mut last_transient = String::new();
        let mut last_was_transport = false;
        let attempts = self.policy.max_attempts.max(1);
        for attempt in 1..=attempts {
            if !delay.is_zero() {
                self.sleeper.sleep(delay);
            }
            self.counters.attempts.fetch_add(1, Ordering::Relaxed);
            let outcome = self.transport.post_json(&self.url, self.api_key.as_deref(), &body);
            log.push(AttemptRecord {
                attempt,
                status: outcome.as_ref().ok().map(|r| r.status),
                delay_before: delay,
            });
            match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return (parse_wire_response(&reply.body), log);
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    return (Err(GatewayError::Auth(format!("HTTP {}", reply.status))), log);
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    log::warn!("transient HTTP {} from {} (attempt {attempt})", reply.status, self.url);
                    last_transient = format!("HTTP {}", reply.status);
                    last_was_transport = false;
                }
                Ok(reply) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    return (
                        Err(GatewayError::MalformedResponse(format!("HTTP {} rejected request", reply.status))),
                        log,
                    );
                }
                Err(e) => {
                    log::warn!("transport failure to {} (attempt {attempt}): {}", self.url, e.message);
                    last_transient = e.message;
                    last_was_transport = true;
                }
            }
            delay = self.jittered(attempt);
        }
        self.counters.failures.fetch_add(1, Ordering::Relaxed);
        let err = if last_was_transport {
            GatewayError::Network(last_transient)
        } else {
            GatewayError::RateLimitedExhausted {
                attempts,
                last: last_transient,
            }
        };
        (Err(err), log)
    }
}

impl<T: Transport> ChatBackend for HttpBackend<T> {
    fn complete(&self, req: &ChatRequest, ctx: &RequestContext) -> Result<String, GatewayError> {
        log::debug!(
            "request {:?} case={} branch={} turn={} messages={:?}",
            ctx.purpose,
            ctx.case_id,
            ctx.branch_id,
            ctx.turn_index,
            req.messages
        );
        let (result, log) = self.send_logged(req);
        log::info!(
            "{:?} case={} turn={} attempts={} ok={}",
            ctx.purpose,
            ctx.case_id,
            ctx.turn_index,
            log.len(),
            result.is_ok()
        );
        result
    }
}

#[cfg(feature = "http")]
pub use ureq_transport::UreqTransport;

#[cfg(feature = "http")]
mod ureq_transport {
    use super::{HttpReply, Transport, TransportError};
    use std::time::Duration;

    /// Blocking HTTP transport.
    pub struct UreqTransport {
        agent: ureq::Agent,
    }

    impl UreqTransport {
        pub fn new(timeout: Duration) -> Self {
            let agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(timeout))
                .build()
                .into();
            Self { agent }
        }
    }

    impl Transport for UreqTransport {
        fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply, TransportError> {
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(key) = bearer {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req.send(body).map_err(|e| TransportError {
                timeout: matches!(e, ureq::Error::Timeout(_)),
                message: e.to_string(),
            })?;
            let status = resp.status().as_u16();
            let body = resp.body_mut().read_to_string().map_err(|e| TransportError {
                timeout: matches!(e, ureq::Error::Timeout(_)),
                message: e.to_string(),
            })?;
            Ok(HttpReply { status, body })
        }
    }
}

/// One teacher (or evaluated model) reachable through the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub label: String,
    /// Base URL; falls back to `MEDACTION_API_BASE`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_auth_env")]
    pub auth: String,
}

fn default_auth_env() -> String {
    API_KEY_ENV.to_owned()
}

impl TeacherSpec {
    pub fn scripted(label: &str) -> Self {
        Self {
            label: label.to_owned(),
            endpoint: None,
            model_id: "scripted".to_owned(),
            auth: default_auth_env(),
        }
    }

    pub fn resolve_url(&self) -> Option<String> {
        self.endpoint
            .clone()
            .or_else(|| std::env::var(API_BASE_ENV).ok())
            .map(|b| completions_url(&b))
    }
}

/// Backend selection in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted {
        script: PathBuf,
    },
    Http {
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    300
}
