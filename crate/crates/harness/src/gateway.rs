//! Chat-completion backends, retries, token accounting and budgets.
//!
//! A [`Gateway`] wraps one [`Backend`] and the run-wide [`Budget`]. Each
//! sample talks to it through its own [`Session`], which owns the sample's
//! ledger and transcript, so concurrent samples never share mutable state
//! except the budget.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use repoport_core::atlas::sha256_hex;
use repoport_core::extract::render_labeled_response;
use repoport_core::tokens::{charge_budget, Budget, HeuristicTokenizer, TokenLedger, Tokenizer, Usage, WhitespaceTokenizer};
use repoport_core::{FinishReason, PromptPurpose, PromptRecord, RelPath};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable holding the API key for remote backends.
pub const API_KEY_ENV: &str = "REPOPORT_API_KEY";
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<Message>,
    pub max_output_tokens: u64,
    pub temperature: f64,
    pub request_id: String,
    /// Position of this request within its sample, from 0.
    pub sequence: u32,
}

impl ChatRequest {
    fn text_of(&self, role: Role) -> &str {
        self.messages.iter().find(|m| m.role == role).map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn user_text(&self) -> &str {
        self.text_of(Role::User)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    /// `None` when the backend did not report usage.
    pub usage: Option<Usage>,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed reply: {0}")]
    Protocol(String),
    #[error("mock script: {0}")]
    Script(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code == 429 || (500..600).contains(code),
            BackendError::Protocol(_) | BackendError::Script(_) => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
    /// Tokenizer used for estimates when the backend reports no usage.
    fn tokenizer(&self) -> &dyn Tokenizer;
}

/// Token count under the backend's counting rule.
pub fn count_tokens(text: &str, backend: &dyn Backend) -> u64 {
    backend.tokenizer().count(text)
}

// ---------------------------------------------------------------------------
// Mock backend

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Content {
        content: String,
        #[serde(default)]
        finish_reason: Option<FinishReason>,
    },
    File {
        file: PathBuf,
        label: String,
        #[serde(default)]
        finish_reason: Option<FinishReason>,
    },
    Files {
        files: Vec<MockFile>,
        #[serde(default)]
        finish_reason: Option<FinishReason>,
    },
    Error {
        error: String,
        #[serde(default)]
        status: Option<u16>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFile {
    /// Path of the file holding the reply content, relative to the script.
    pub file: PathBuf,
    /// Path label written above the code block.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Needles {
    One(String),
    All(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Substring(s) that must all occur in the user message.
    pub contains: Needles,
    pub reply: MockReply,
}

/// A scripted session. Lookup order: SHA-256 of the user message, then the
/// first matching rule, then the request's position in its sample, then
/// the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub by_digest: BTreeMap<String, MockReply>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub by_index: Vec<MockReply>,
    #[serde(default)]
    pub default: Option<MockReply>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("bad backend `{0}`: expected mock:<script>, openai:<model>@<base-url> or a JSON file")]
    BadSpec(String),
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let message = msg.rfind(" at line ").map(|i| msg[..i].to_string()).unwrap_or(msg);
        ConfigError::Parse { path: path.to_path_buf(), line: e.line(), column: e.column(), message }
    })
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

/// Replays a [`MockScript`]. Usage is counted with the whitespace
/// tokenizer over the system and user messages and the reply.
#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
    base_dir: PathBuf,
}

impl MockBackend {
    pub fn new(script: MockScript, base_dir: impl Into<PathBuf>) -> Self {
        MockBackend { script, base_dir: base_dir.into() }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let script = parse_json(&read(path)?, path)?;
        Ok(Self::new(script, path.parent().unwrap_or(Path::new("."))))
    }

    fn lookup(&self, req: &ChatRequest) -> Option<&MockReply> {
        let user = req.user_text();
        if let Some(r) = self.script.by_digest.get(&sha256_hex(user.as_bytes())) {
            return Some(r);
        }
        let rule = self.script.rules.iter().find(|r| match &r.contains {
            Needles::One(s) => user.contains(s.as_str()),
            Needles::All(v) => v.iter().all(|s| user.contains(s.as_str())),
        });
        if let Some(r) = rule {
            return Some(&r.reply);
        }
        self.script.by_index.get(req.sequence as usize).or(self.script.default.as_ref())
    }

    fn load(&self, file: &Path) -> Result<String, BackendError> {
        let path = self.base_dir.join(file);
        fs::read_to_string(&path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))
    }

    fn labeled(&self, files: &[(&Path, &str)]) -> Result<String, BackendError> {
        let mut pairs = Vec::new();
        for (file, label) in files {
            let label = RelPath::new(label).map_err(|e| BackendError::Script(format!("label `{label}`: {e}")))?;
            let mut text = self.load(file)?;
            if text.ends_with('\n') {
                text.pop();
            }
            pairs.push((label, text));
        }
        Ok(render_labeled_response(&pairs))
    }
}

impl Backend for MockBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let reply = self
            .lookup(req)
            .ok_or_else(|| BackendError::Script(format!("no scripted reply for request {}", req.request_id)))?;
        let (content, finish) = match reply {
            MockReply::Text(s) => (s.clone(), None),
            MockReply::Content { content, finish_reason } => (content.clone(), *finish_reason),
            MockReply::File { file, label, finish_reason } => (self.labeled(&[(file, label)])?, *finish_reason),
            MockReply::Files { files, finish_reason } => {
                let v: Vec<(&Path, &str)> = files.iter().map(|f| (f.file.as_path(), f.label.as_str())).collect();
                (self.labeled(&v)?, *finish_reason)
            }
            MockReply::Error { error, status } => {
                return Err(match status {
                    Some(code) => BackendError::Status { code: *code, body: error.clone() },
                    None => BackendError::Script(error.clone()),
                })
            }
        };
        let t = WhitespaceTokenizer;
        let input = req.messages.iter().map(|m| t.count(&m.content)).sum();
        let usage = Usage { input_tokens: input, output_tokens: t.count(&content), estimated: false };
        Ok(ChatResponse { content, usage: Some(usage), finish_reason: finish.unwrap_or(FinishReason::Stop) })
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &WhitespaceTokenizer
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible backend

pub struct OpenAiBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build().into();
        OpenAiBackend { base_url: base_url.trim_end_matches('/').to_string(), api_key, agent }
    }

    pub fn request_body(req: &ChatRequest) -> Value {
        serde_json::json!({
            "model": req.model_name,
            "messages": req.messages,
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        })
    }

    pub fn parse_reply(body: &str) -> Result<ChatResponse, BackendError> {
        let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let choice = v.pointer("/choices/0").ok_or_else(|| BackendError::Protocol("no choices".into()))?;
        let content = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("choices[0].message.content missing".into()))?
            .to_string();
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Stop,
        };
        let usage = v.get("usage").and_then(|u| {
            Some(Usage {
                input_tokens: u.get("prompt_tokens")?.as_u64()?,
                output_tokens: u.get("completion_tokens")?.as_u64()?,
                estimated: false,
            })
        });
        Ok(ChatResponse { content, usage, finish_reason })
    }
}

impl Backend for OpenAiBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = Self::request_body(req).to_string();
        let mut call = self.agent.post(format!("{}/chat/completions", self.base_url)).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call.send(body.as_bytes()).map_err(|e| BackendError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            let mut body = text;
            body.truncate(500);
            return Err(BackendError::Status { code, body });
        }
        Self::parse_reply(&text)
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &HeuristicTokenizer
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 500 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base, 2*base, 4*base...
    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Mock { script: PathBuf },
    Openai { base_url: String, model: String },
}

fn default_context_window() -> u64 {
    32_768
}

fn default_max_output() -> u64 {
    4096
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Label used for this LLM in reports; defaults to the model name or
    /// `mock`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_context_window")]
    pub context_window: u64,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub request_timeout_seconds: Option<u64>,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            name: None,
            kind,
            context_window: default_context_window(),
            max_output_tokens: default_max_output(),
            temperature: DEFAULT_TEMPERATURE,
            retry: RetryPolicy::default(),
            request_timeout_seconds: None,
        }
    }

    /// Parses `mock:<script>`, `openai:<model>@<base-url>` or the path of a
    /// JSON config file.
    pub fn parse_spec(spec: &str) -> Result<Self, ConfigError> {
        if let Some(rest) = spec.strip_prefix("mock:") {
            return Ok(Self::new(BackendKind::Mock { script: PathBuf::from(rest) }));
        }
        if let Some(rest) = spec.strip_prefix("openai:") {
            let (model, url) = rest.split_once('@').ok_or_else(|| ConfigError::BadSpec(spec.into()))?;
            if model.is_empty() || url.is_empty() {
                return Err(ConfigError::BadSpec(spec.into()));
            }
            return Ok(Self::new(BackendKind::Openai { base_url: url.into(), model: model.into() }));
        }
        let path = Path::new(spec);
        if path.is_file() {
            let mut cfg: BackendConfig = parse_json(&read(path)?, path)?;
            if let BackendKind::Mock { script } = &mut cfg.kind {
                *script = path.parent().unwrap_or(Path::new(".")).join(&*script);
            }
            return Ok(cfg);
        }
        Err(ConfigError::BadSpec(spec.into()))
    }

    pub fn model_name(&self) -> &str {
        match &self.kind {
            BackendKind::Mock { .. } => "mock",
            BackendKind::Openai { model, .. } => model,
        }
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or_else(|| self.model_name())
    }

    pub fn build(&self) -> Result<Box<dyn Backend>, ConfigError> {
        Ok(match &self.kind {
            BackendKind::Mock { script } => Box::new(MockBackend::from_file(script)?),
            BackendKind::Openai { base_url, .. } => {
                let timeout = Duration::from_secs(self.request_timeout_seconds.unwrap_or(600));
                Box::new(OpenAiBackend::new(base_url, std::env::var(API_KEY_ENV).ok(), timeout))
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Gateway and sessions

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("budget exhausted")]
    BudgetExceeded,
    #[error("backend failed after {attempts} attempt(s): {source}")]
    Backend { attempts: u32, source: BackendError },
}

/// Per-sample request state.
#[derive(Debug, Clone, Default)]
pub struct Session {
    pub sample_id: String,
    pub ledger: TokenLedger,
    pub transcript: Vec<PromptRecord>,
    next: u32,
}

impl Session {
    pub fn new(sample_id: impl Into<String>) -> Self {
        Session { sample_id: sample_id.into(), ..Default::default() }
    }

    fn next_id(&mut self) -> (String, u32) {
        let seq = self.next;
        self.next += 1;
        (format!("{}-r{seq:03}", self.sample_id), seq)
    }
}

/// What a caller asks the gateway to send.
#[derive(Debug, Clone, Copy)]
pub struct Prompt<'a> {
    pub purpose: PromptPurpose,
    pub target_path: Option<&'a RelPath>,
    pub system: &'a str,
    pub user: &'a str,
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    model_name: String,
    max_output_tokens: u64,
    temperature: f64,
    retry: RetryPolicy,
    budget: Mutex<Budget>,
    started: Instant,
    dispatched: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, config: &BackendConfig, budget: Budget) -> Self {
        Gateway {
            backend,
            model_name: config.model_name().to_string(),
            max_output_tokens: config.max_output_tokens,
            temperature: config.temperature,
            retry: config.retry,
            budget: Mutex::new(budget),
            started: Instant::now(),
            dispatched: AtomicU64::new(0),
        }
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    /// Number of calls that reached the backend, retries included.
    pub fn dispatched(&self) -> u64 {
        self.dispatched.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Budget {
        let mut b = self.budget.lock().expect("budget lock poisoned");
        b.elapsed = self.started.elapsed();
        *b
    }

    pub fn is_exhausted(&self) -> bool {
        self.budget().is_exhausted()
    }

    /// Sends one prompt. Exactly one [`PromptRecord`] and one ledger entry
    /// are appended to `session`, whatever the outcome.
    pub fn send(&self, session: &mut Session, prompt: Prompt<'_>) -> Result<ChatResponse, GatewayError> {
        let (request_id, sequence) = session.next_id();
        let mut record = PromptRecord {
            request_id: request_id.clone(),
            purpose: prompt.purpose,
            target_path: prompt.target_path.cloned(),
            system_prompt: prompt.system.to_string(),
            rendered_prompt: prompt.user.to_string(),
            response: String::new(),
            usage: Usage::default(),
            finish_reason: FinishReason::Error,
            attempts: 0,
            error: None,
        };
        if self.is_exhausted() {
            record.error = Some(GatewayError::BudgetExceeded.to_string());
            session.ledger.record(&request_id, record.usage);
            session.transcript.push(record);
            return Err(GatewayError::BudgetExceeded);
        }
        let mut messages = Vec::with_capacity(2);
        if !prompt.system.is_empty() {
            messages.push(Message { role: Role::System, content: prompt.system.to_string() });
        }
        messages.push(Message { role: Role::User, content: prompt.user.to_string() });
        let request = ChatRequest {
            model_name: self.model_name.clone(),
            messages,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
            request_id: request_id.clone(),
            sequence,
        };
        let max_attempts = self.retry.max_attempts.max(1);
        let result = loop {
            record.attempts += 1;
            self.dispatched.fetch_add(1, Ordering::SeqCst);
            match self.backend.send(&request) {
                Ok(r) => break Ok(r),
                Err(e) if e.is_retryable() && record.attempts < max_attempts => {
                    log::warn!("{request_id}: attempt {} failed: {e}", record.attempts);
                    std::thread::sleep(self.retry.delay(record.attempts));
                }
                Err(e) => break Err(e),
            }
        };
        match result {
            Ok(mut resp) => {
                let usage = resp.usage.unwrap_or_else(|| {
                    let t = self.backend.tokenizer();
                    Usage {
                        input_tokens: request.messages.iter().map(|m| t.count(&m.content)).sum(),
                        output_tokens: t.count(&resp.content),
                        estimated: true,
                    }
                });
                resp.usage = Some(usage);
                {
                    let mut b = self.budget.lock().expect("budget lock poisoned");
                    *b = charge_budget(*b, usage);
                }
                record.usage = usage;
                record.response = resp.content.clone();
                record.finish_reason = resp.finish_reason;
                session.ledger.record(&request_id, usage);
                session.transcript.push(record);
                Ok(resp)
            }
            Err(source) => {
                let err = GatewayError::Backend { attempts: record.attempts, source };
                record.error = Some(err.to_string());
                session.ledger.record(&request_id, record.usage);
                session.transcript.push(record);
                Err(err)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn gateway(backend: Box<dyn Backend>, budget: Budget) -> Gateway {
        let mut cfg = BackendConfig::new(BackendKind::Mock { script: "x".into() });
        cfg.retry.base_delay_ms = 1;
        Gateway::new(backend, &cfg, budget)
    }

    fn prompt(user: &str) -> Prompt<'_> {
        Prompt { purpose: PromptPurpose::TranslateFile, target_path: None, system: "sys tem", user }
    }

    #[test]
    fn mock_lookup_order() {
        let mut script = MockScript::default();
        script.by_digest.insert(sha256_hex(b"exact"), MockReply::Text("by digest".into()));
        script.rules.push(MockRule { contains: Needles::One("needle".into()), reply: MockReply::Text("by rule".into()) });
        script.by_index = ["i0", "i1", "i2", "i3"].iter().map(|s| MockReply::Text(s.to_string())).collect();
        script.default = Some(MockReply::Content { content: "cut".into(), finish_reason: Some(FinishReason::Length) });
        let g = gateway(Box::new(MockBackend::new(script, ".")), Budget::unlimited());
        let mut s = Session::new("s");
        let got: Vec<(String, FinishReason)> = ["exact", "a needle", "x", "y", "z"]
            .iter()
            .map(|u| {
                let r = g.send(&mut s, prompt(u)).unwrap();
                (r.content, r.finish_reason)
            })
            .collect();
        assert_eq!(got[0].0, "by digest");
        assert_eq!(got[1].0, "by rule");
        assert_eq!(got[2].0, "i2");
        assert_eq!(got[3].0, "i3");
        assert_eq!(got[4], ("cut".to_string(), FinishReason::Length));
        assert_eq!(s.transcript[4].request_id, "s-r004");
    }

    #[test]
    fn mock_usage_is_whitespace_counted() {
        let script = MockScript { default: Some(MockReply::Text("a b c".into())), ..Default::default() };
        let g = gateway(Box::new(MockBackend::new(script, ".")), Budget::unlimited());
        let mut s = Session::new("s");
        let r = g.send(&mut s, prompt("one two three four")).unwrap();
        assert_eq!(r.usage, Some(Usage { input_tokens: 6, output_tokens: 3, estimated: false }));
        assert_eq!(count_tokens("a b c", g.backend()), 3);
    }

    #[test]
    fn exhausted_budget_blocks_dispatch() {
        let script = MockScript { default: Some(MockReply::Text("x".into())), ..Default::default() };
        let mut budget = Budget::new(Some(1000), None);
        budget.consumed_tokens = 1000;
        let g = gateway(Box::new(MockBackend::new(script, ".")), budget);
        let mut s = Session::new("s");
        assert_eq!(g.send(&mut s, prompt("hi")), Err(GatewayError::BudgetExceeded));
        assert_eq!(g.dispatched(), 0);
        assert_eq!(s.transcript.len(), 1);
        assert_eq!(s.transcript[0].attempts, 0);
        assert_eq!(s.ledger.per_request().len(), 1);
    }

    struct Flaky {
        failures: AtomicU32,
        error: BackendError,
    }

    impl Backend for Flaky {
        fn send(&self, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(self.error.clone());
            }
            Ok(ChatResponse { content: "ok".into(), usage: None, finish_reason: FinishReason::Stop })
        }
        fn tokenizer(&self) -> &dyn Tokenizer {
            &HeuristicTokenizer
        }
    }

    #[test]
    fn retries_transient_errors_and_estimates_usage() {
        let b = Flaky { failures: AtomicU32::new(2), error: BackendError::Status { code: 503, body: String::new() } };
        let g = gateway(Box::new(b), Budget::unlimited());
        let mut s = Session::new("s");
        let r = g.send(&mut s, prompt("abcdefgh")).unwrap();
        assert_eq!(s.transcript[0].attempts, 3);
        // "sys tem" is 7 bytes -> 2, "abcdefgh" -> 2, "ok" -> 1
        assert_eq!(r.usage, Some(Usage { input_tokens: 4, output_tokens: 1, estimated: true }));
        assert!(s.ledger.is_estimated());
    }

    #[test]
    fn gives_up_after_max_attempts_and_not_on_client_errors() {
        let b = Flaky { failures: AtomicU32::new(5), error: BackendError::Transport("reset".into()) };
        let g = gateway(Box::new(b), Budget::unlimited());
        let mut s = Session::new("s");
        assert!(matches!(g.send(&mut s, prompt("x")), Err(GatewayError::Backend { attempts: 3, .. })));
        let b = Flaky { failures: AtomicU32::new(5), error: BackendError::Status { code: 400, body: String::new() } };
        let g = gateway(Box::new(b), Budget::unlimited());
        assert!(matches!(g.send(&mut s, prompt("x")), Err(GatewayError::Backend { attempts: 1, .. })));
        assert_eq!(s.transcript.len(), 2);
    }

    #[test]
    fn charges_cross_the_limit_without_losing_usage() {
        let script = MockScript { default: Some(MockReply::Text("w ".repeat(50))), ..Default::default() };
        let g = gateway(Box::new(MockBackend::new(script, ".")), Budget::new(Some(60), None));
        let mut s = Session::new("s");
        g.send(&mut s, prompt("go")).unwrap();
        assert_eq!(g.budget().consumed_tokens, 53);
        g.send(&mut s, prompt("go")).unwrap();
        assert_eq!(g.budget().consumed_tokens, 106);
        assert!(g.is_exhausted());
        assert_eq!(g.send(&mut s, prompt("go")), Err(GatewayError::BudgetExceeded));
        assert_eq!(g.dispatched(), 2);
        assert_eq!(s.ledger.total(), 106);
    }

    #[test]
    fn parses_openai_replies() {
        let r = OpenAiBackend::parse_reply(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"length"}],"usage":{"prompt_tokens":5,"completion_tokens":7}}"#,
        )
        .unwrap();
        assert_eq!(r.content, "hi");
        assert_eq!(r.finish_reason, FinishReason::Length);
        assert_eq!(r.usage.unwrap().total(), 12);
        assert!(OpenAiBackend::parse_reply("{}").is_err());
        let r = OpenAiBackend::parse_reply(r#"{"choices":[{"message":{"content":"x"}}]}"#).unwrap();
        assert_eq!(r.usage, None);
    }

    #[test]
    fn backend_specs() {
        let c = BackendConfig::parse_spec("openai:gpt-4o@http://localhost:8000/v1").unwrap();
        assert_eq!(c.model_name(), "gpt-4o");
        assert!(matches!(c.kind, BackendKind::Openai { ref base_url, .. } if base_url == "http://localhost:8000/v1"));
        let c = BackendConfig::parse_spec("mock:s.json").unwrap();
        assert_eq!(c.label(), "mock");
        assert!(BackendConfig::parse_spec("openai:gpt").is_err());
        assert!(BackendConfig::parse_spec("bogus").is_err());
    }

    #[test]
    fn backend_config_file() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("b.json");
        fs::write(&p, r#"{"kind": "mock", "script": "s.json", "name": "scripted", "context_window": 99}"#).unwrap();
        let c = BackendConfig::parse_spec(p.to_str().unwrap()).unwrap();
        assert_eq!(c.label(), "scripted");
        assert_eq!(c.context_window, 99);
        assert_eq!(c.kind, BackendKind::Mock { script: d.path().join("s.json") });
    }

    #[test]
    fn retry_delays_double() {
        let p = RetryPolicy { max_attempts: 3, base_delay_ms: 100 };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(400));
    }
}
