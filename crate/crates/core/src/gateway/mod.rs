//! Chat-completion access for the explainer, sentence-generator and judge
//! roles, with a response cache, retries, a rate limit and an offline mock.

mod cache;
mod http;
pub mod mock;
pub mod rate;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheEntry, ResponseCache};
pub use http::HttpTransport;
pub use mock::{JudgePolicy, MockBackend};
pub use rate::{Clock, RateLimiter, SystemClock, VirtualClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleClass {
    Explainer,
    SentenceGenerator,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f32,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_class: RoleClass,
    pub messages: Vec<Message>,
    pub decoding: Decoding,
}

impl ChatRequest {
    pub fn new(role_class: RoleClass, messages: Vec<Message>, decoding: Decoding) -> Self {
        Self { role_class, messages, decoding }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("message {i} is empty")));
        }
        Ok(())
    }

    /// Hash of the rendered prompt (role, messages, decoding), independent of
    /// which model serves it.
    pub fn prompt_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Copy with an extra user turn, used to re-ask after an unparsable reply.
    pub fn with_followup(&self, note: impl Into<String>) -> Self {
        let mut r = self.clone();
        r.messages.push(Message::user(note));
        r
    }
}

/// Cache key: hash of (role class, model name, messages, decoding).
pub fn cache_key(model: &str, request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        role_class: RoleClass,
        model: &'a str,
        messages: &'a [Message],
        decoding: Decoding,
    }
    let json = serde_json::to_vec(&Key {
        role_class: request.role_class,
        model,
        messages: &request.messages,
        decoding: request.decoding,
    })
    .expect("key serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl EndpointConfig {
    fn openai(model: &str) -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: model.into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, given `n ≥ 1` failed attempts.
    pub fn backoff(&self, failed: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(failed.saturating_sub(1) as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "http" => Ok(Self::Http),
            "mock" => Ok(Self::Mock),
            other => Err(format!("unknown backend `{other}` (expected mock or http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub explainer: EndpointConfig,
    pub sentence_generator: EndpointConfig,
    pub judge: EndpointConfig,
    pub cache_dir: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub rate_limit_per_minute: Option<u32>,
    pub timeout_secs: u64,
    pub mock_judge: JudgePolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            explainer: EndpointConfig::openai("gpt-4o-mini"),
            sentence_generator: EndpointConfig::openai("gpt-4o-mini"),
            judge: EndpointConfig::openai("gpt-4o-mini"),
            cache_dir: None,
            retry: RetryPolicy::default(),
            rate_limit_per_minute: None,
            timeout_secs: 120,
            mock_judge: JudgePolicy::KeywordOverlap,
        }
    }
}

impl GatewayConfig {
    pub fn endpoint(&self, role: RoleClass) -> &EndpointConfig {
        match role {
            RoleClass::Explainer => &self.explainer,
            RoleClass::SentenceGenerator => &self.sentence_generator,
            RoleClass::Judge => &self.judge,
        }
    }

    /// Model name recorded for a role; the mock reports itself as `mock`.
    pub fn model_name(&self, role: RoleClass) -> &str {
        match self.backend {
            BackendKind::Mock => "mock",
            BackendKind::Http => &self.endpoint(role).model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Connection, timeout or malformed body; retried.
    Network(String),
    Status { code: u16, body: String },
}

impl std::fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Network(e) => write!(f, "{e}"),
            Self::Status { code, body } => write!(f, "HTTP {code}: {body}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(
        &self,
        endpoint: &EndpointConfig,
        api_key: Option<&str>,
        request: &ChatRequest,
    ) -> Result<String, TransportFailure>;

    /// Whether calls leave the process.
    fn is_network(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Request { status: u16, body: String },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    /// Calls handed to the transport, including retries.
    pub transport_calls: u64,
    /// Subset of transport calls that left the process.
    pub network_calls: u64,
    pub cache_hits: u64,
}

type Outcome = Result<String, GatewayError>;

#[derive(Default)]
struct InFlight {
    result: Mutex<Option<Outcome>>,
    done: Condvar,
}

pub struct Gateway {
    config: GatewayConfig,
    transport: Box<dyn Transport>,
    cache: ResponseCache,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    inflight: Mutex<HashMap<String, Arc<InFlight>>>,
    transport_calls: AtomicU64,
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    /// Gateway for the configured backend. The HTTP backend checks that every
    /// configured API-key variable is set before anything is sent.
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let transport: Box<dyn Transport> = match config.backend {
            BackendKind::Mock => Box::new(MockBackend { judge: config.mock_judge }),
            BackendKind::Http => {
                for role in [RoleClass::Explainer, RoleClass::SentenceGenerator, RoleClass::Judge] {
                    api_key(config.endpoint(role))?;
                }
                Box::new(
                    HttpTransport::new(Duration::from_secs(config.timeout_secs))
                        .map_err(GatewayError::Config)?,
                )
            }
        };
        Self::with_transport(config, transport, Arc::new(SystemClock::default()))
    }

    pub fn mock() -> Self {
        Self::new(GatewayConfig::default()).expect("mock gateway needs no configuration")
    }

    pub fn with_transport(
        config: GatewayConfig,
        transport: Box<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        Ok(Self {
            cache: ResponseCache::new(config.cache_dir.clone())?,
            limiter: RateLimiter::new(config.rate_limit_per_minute),
            config,
            transport,
            clock,
            inflight: Mutex::default(),
            transport_calls: AtomicU64::new(0),
            network_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn model_name(&self, role: RoleClass) -> &str {
        self.config.model_name(role)
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            transport_calls: self.transport_calls.load(Ordering::SeqCst),
            network_calls: self.network_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Outcome {
        request.validate()?;
        let model = self.model_name(request.role_class).to_string();
        let key = cache_key(&model, request);
        if let Some(hit) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }

        let (slot, leader) = {
            let mut map = self.inflight.lock().unwrap();
            match map.get(&key) {
                Some(s) => (s.clone(), false),
                None => {
                    let s = Arc::new(InFlight::default());
                    map.insert(key.clone(), s.clone());
                    (s, true)
                }
            }
        };
        if !leader {
            let mut guard = slot.result.lock().unwrap();
            while guard.is_none() {
                guard = slot.done.wait(guard).unwrap();
            }
            return guard.clone().expect("set before notify");
        }

        let outcome = self.fetch(&key, &model, request);
        *slot.result.lock().unwrap() = Some(outcome.clone());
        slot.done.notify_all();
        self.inflight.lock().unwrap().remove(&key);
        outcome
    }

    fn fetch(&self, key: &str, model: &str, request: &ChatRequest) -> Outcome {
        let endpoint = self.config.endpoint(request.role_class);
        let key_value = if self.transport.is_network() {
            api_key(endpoint)?
        } else {
            None
        };
        let policy = &self.config.retry;
        let max_attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            self.limiter.acquire(self.clock.as_ref());
            self.transport_calls.fetch_add(1, Ordering::SeqCst);
            if self.transport.is_network() {
                self.network_calls.fetch_add(1, Ordering::SeqCst);
            }
            match self.transport.send(endpoint, key_value.as_deref(), request) {
                Ok(text) => {
                    let timestamp = SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_secs())
                        .unwrap_or(0);
                    self.cache.put(
                        key,
                        CacheEntry {
                            request: request.clone(),
                            model: model.to_string(),
                            response: text.clone(),
                            timestamp,
                        },
                    )?;
                    return Ok(text);
                }
                Err(TransportFailure::Status { code, body }) if (400..500).contains(&code) && code != 429 => {
                    return Err(GatewayError::Request { status: code, body });
                }
                Err(failure) => {
                    log::warn!("{:?} call attempt {attempt}/{max_attempts} failed: {failure}", request.role_class);
                    last = failure.to_string();
                    if attempt < max_attempts {
                        self.clock.sleep(policy.backoff(attempt));
                    }
                }
            }
        }
        Err(GatewayError::Transport { attempts: max_attempts, detail: last })
    }
}

fn api_key(endpoint: &EndpointConfig) -> Result<Option<String>, GatewayError> {
    let Some(var) = &endpoint.api_key_env else { return Ok(None) };
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => Ok(Some(v)),
        _ => Err(GatewayError::Config(format!(
            "environment variable {var} (API key for {}) is not set",
            endpoint.url
        ))),
    }
}
