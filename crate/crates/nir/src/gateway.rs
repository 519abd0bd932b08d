//! Uniform completion interface over language-model backends: durable
//! response caching keyed by request content, retry with exponential backoff,
//! an OpenAI-compatible HTTP backend, and a deterministic offline stub so the
//! whole pipeline runs without network access.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the API key for HTTP backends.
pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend payload: {0}")]
    Malformed(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            BackendError::RateLimited(_) | BackendError::Transport(_)
        )
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("backend error (attempt {attempts}): {source}")]
    NonRetryable { attempts: u32, source: BackendError },
    #[error("cache miss for key {key} in offline mode")]
    OfflineMiss { key: String },
    #[error("cache io error: {0}")]
    Cache(#[from] std::io::Error),
}

/// A completion request; the cache key is a pure function of these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub backend_id: String,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn new(backend_id: &str, model: &str, prompt: String) -> Self {
        CompletionRequest {
            backend_id: backend_id.to_string(),
            model: model.to_string(),
            prompt,
            temperature: 0.0,
            max_tokens: 512,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".to_string()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResponse {
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub attempts: u32,
    pub backend_meta: String,
}

/// Canonical byte encoding of a request. Every field is length-prefixed so
/// the encoding is injective; numbers use Rust's shortest round-trip form,
/// which makes `0` and `0.0` identical.
fn canonical_request(req: &CompletionRequest) -> Vec<u8> {
    let mut out = Vec::new();
    let mut push_field = |name: &str, value: &str| {
        out.extend_from_slice(name.as_bytes());
        out.push(b':');
        out.extend_from_slice(value.len().to_string().as_bytes());
        out.push(b':');
        out.extend_from_slice(value.as_bytes());
        out.push(b'\n');
    };
    push_field("backend", &req.backend_id);
    push_field("model", &req.model);
    push_field("temperature", &format!("{}", req.temperature));
    push_field("max_tokens", &req.max_tokens.to_string());
    match &req.stop {
        None => push_field("stop", "-"),
        Some(stops) => {
            let joined: String = stops
                .iter()
                .map(|s| format!("{}:{s}", s.len()))
                .collect::<Vec<_>>()
                .join(",");
            push_field("stop", &joined);
        }
    }
    push_field("prompt", &req.prompt);
    out
}

/// 64-hex-digit digest identifying a request.
pub fn cache_key(req: &CompletionRequest) -> String {
    let digest = Sha256::digest(canonical_request(req));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content-addressed directory of response texts plus an append-only JSONL
/// index for inspection. Writes go through a temp file and rename, so
/// concurrent writers of the same key are benign.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize)]
struct IndexEntry<'a> {
    key: &'a str,
    backend: &'a str,
    model: &'a str,
    created_unix_ms: u128,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, std::io::Error> {
        std::fs::create_dir_all(dir)?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
        })
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, std::io::Error> {
        match std::fs::read_to_string(self.entry_path(key)) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(
        &self,
        key: &str,
        req: &CompletionRequest,
        text: &str,
    ) -> Result<(), std::io::Error> {
        let tmp = self.dir.join(format!(
            "{key}.tmp-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0)
        ));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, self.entry_path(key))?;
        let entry = IndexEntry {
            key,
            backend: &req.backend_id,
            model: &req.model,
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        };
        let line = serde_json::to_string(&entry).expect("index entry serializes");
        use std::io::Write;
        let mut index = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("index.jsonl"))?;
        writeln!(index, "{line}")?;
        Ok(())
    }
}

/// Extra knowledge about the prompt, used by the stub backend to produce a
/// deterministic heuristic answer. HTTP backends ignore it; the prompt text
/// already carries the same information.
#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    pub watched_titles: Vec<String>,
    /// Candidate titles in their score order.
    pub candidate_titles: Vec<String>,
    pub k: usize,
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(
        &self,
        req: &CompletionRequest,
        ctx: Option<&PromptContext>,
    ) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub meta: String,
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base: Duration::from_secs(2),
            factor: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used with deterministic backends and in
    /// tests.
    pub fn immediate() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base: Duration::ZERO,
            factor: 2.0,
            jitter: false,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base.as_secs_f64() * self.factor.powi(attempt.saturating_sub(1) as i32);
        let capped = exp.min(60.0);
        if self.jitter {
            Duration::from_secs_f64(rand::rng().random_range(0.0..=capped))
        } else {
            Duration::from_secs_f64(capped)
        }
    }
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    pub cache_hits: AtomicU64,
    pub backend_calls: AtomicU64,
}

/// Front door for completions: checks the cache, otherwise drives the
/// backend under the retry policy and persists the response.
pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    offline: bool,
    stats: GatewayStats,
}

impl Gateway {
    pub fn new(
        backend: Box<dyn CompletionBackend>,
        cache: Option<ResponseCache>,
        retry: RetryPolicy,
    ) -> Self {
        Gateway {
            backend,
            cache,
            retry,
            offline: false,
            stats: GatewayStats::default(),
        }
    }

    /// In offline mode a cache miss is an error instead of a backend call.
    pub fn set_offline(&mut self, offline: bool) {
        self.offline = offline;
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn cache_hits(&self) -> u64 {
        self.stats.cache_hits.load(Ordering::Relaxed)
    }

    pub fn backend_calls(&self) -> u64 {
        self.stats.backend_calls.load(Ordering::Relaxed)
    }

    pub fn complete(
        &self,
        req: &CompletionRequest,
        ctx: Option<&PromptContext>,
    ) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let key = cache_key(req);
        let start = Instant::now();
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&key)? {
                self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(CompletionResponse {
                    text,
                    cached: true,
                    latency_ms: start.elapsed().as_millis() as u64,
                    attempts: 0,
                    backend_meta: "cache".to_string(),
                });
            }
        }
        if self.offline {
            return Err(GatewayError::OfflineMiss { key });
        }

        let mut attempt = 0;
        loop {
            attempt += 1;
            self.stats.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(req, ctx) {
                Ok(reply) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&key, req, &reply.text)?;
                    }
                    return Ok(CompletionResponse {
                        text: reply.text,
                        cached: false,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempts: attempt,
                        backend_meta: reply.meta,
                    });
                }
                Err(err) if err.retryable() && attempt < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.delay(attempt));
                }
                Err(err) if err.retryable() => {
                    return Err(GatewayError::Exhausted {
                        attempts: attempt,
                        last: err.to_string(),
                    });
                }
                Err(err) => {
                    return Err(GatewayError::NonRetryable {
                        attempts: attempt,
                        source: err,
                    });
                }
            }
        }
    }
}

/// Offline deterministic backend. Scripted answers are keyed by the request
/// digest; unscripted requests get a heuristic answer shaped by the prompt:
/// arrow-format recommendation lines for recommendation prompts, fixed
/// boilerplate for the preference/representative subtasks, and a numbered
/// list otherwise.
pub struct StubBackend {
    script: HashMap<String, String>,
}

impl StubBackend {
    pub fn new() -> Self {
        StubBackend {
            script: HashMap::new(),
        }
    }

    pub fn with_script(script: HashMap<String, String>) -> Self {
        StubBackend { script }
    }
}

impl Default for StubBackend {
    fn default() -> Self {
        Self::new()
    }
}

const STUB_PREFERENCE_ANSWER: &str =
    "I look for strong storytelling, memorable characters, and films that are widely acclaimed.";

impl CompletionBackend for StubBackend {
    fn id(&self) -> &str {
        "stub"
    }

    fn complete(
        &self,
        req: &CompletionRequest,
        ctx: Option<&PromptContext>,
    ) -> Result<BackendReply, BackendError> {
        if let Some(text) = self.script.get(&cache_key(req)) {
            return Ok(BackendReply {
                text: text.clone(),
                meta: "stub:scripted".to_string(),
            });
        }
        let prompt = &req.prompt;
        let empty = PromptContext::default();
        let ctx = ctx.unwrap_or(&empty);
        let k = if ctx.k > 0 { ctx.k } else { 10 };

        if prompt.contains("<-") {
            if ctx.candidate_titles.is_empty() {
                return Err(BackendError::Malformed(
                    "recommendation-shaped prompt without candidate context".to_string(),
                ));
            }
            let count = k.min(ctx.candidate_titles.len());
            let lines: Vec<String> = (0..count)
                .map(|i| {
                    let watched = if ctx.watched_titles.is_empty() {
                        "a watched movie"
                    } else {
                        &ctx.watched_titles[i % ctx.watched_titles.len()]
                    };
                    format!("{}. {}: <- {} ->", i + 1, watched, ctx.candidate_titles[i])
                })
                .collect();
            return Ok(BackendReply {
                text: lines.join("\n"),
                meta: "stub:recommend".to_string(),
            });
        }
        if prompt.contains("Step 2:") {
            let count = 5.min(ctx.watched_titles.len());
            let text = if count == 0 {
                "1. a watched movie.".to_string()
            } else {
                (0..count)
                    .map(|i| format!("{}. {}.", i + 1, ctx.watched_titles[i]))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            return Ok(BackendReply {
                text,
                meta: "stub:representative".to_string(),
            });
        }
        if prompt.contains("Step 1:") {
            return Ok(BackendReply {
                text: STUB_PREFERENCE_ANSWER.to_string(),
                meta: "stub:preference".to_string(),
            });
        }
        let listing = if !ctx.candidate_titles.is_empty() {
            &ctx.candidate_titles
        } else {
            &ctx.watched_titles
        };
        let count = k.min(listing.len());
        let text = if count == 0 {
            "I cannot recommend movies without more information.".to_string()
        } else {
            (0..count)
                .map(|i| format!("{}. {}", i + 1, listing[i]))
                .collect::<Vec<_>>()
                .join("\n")
        };
        Ok(BackendReply {
            text,
            meta: "stub:list".to_string(),
        })
    }
}

#[derive(Serialize)]
struct HttpCompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: &'a Option<Vec<String>>,
}

#[derive(Deserialize)]
struct HttpCompletionResponse {
    choices: Vec<HttpChoice>,
}

#[derive(Deserialize)]
struct HttpChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

/// OpenAI-compatible text-completion backend: `POST {base}/completions` with
/// a bearer token from `LLM_API_KEY`.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(120))
                .build(),
        }
    }

    pub fn from_env(base_url: &str) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok())
    }

    fn parse_body(body: &str) -> Result<BackendReply, BackendError> {
        let parsed: HttpCompletionResponse = serde_json::from_str(body)
            .map_err(|e| BackendError::Malformed(format!("bad completion json: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("response has no choices".to_string()))?;
        Ok(BackendReply {
            text: choice.text,
            meta: format!(
                "finish_reason={}",
                choice
                    .finish_reason
                    .unwrap_or_else(|| "unknown".to_string())
            ),
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(
        &self,
        req: &CompletionRequest,
        _ctx: Option<&PromptContext>,
    ) -> Result<BackendReply, BackendError> {
        let body = HttpCompletionBody {
            model: &req.model,
            prompt: &req.prompt,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            stop: &req.stop,
        };
        let url = format!("{}/completions", self.base_url);
        let mut request = self
            .agent
            .post(&url)
            .set("content-type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("authorization", &format!("Bearer {key}"));
        }
        match request.send_json(&body) {
            Ok(response) => {
                let text = response
                    .into_string()
                    .map_err(|e| BackendError::Transport(format!("reading body: {e}")))?;
                Self::parse_body(&text)
            }
            Err(ureq::Error::Status(429, response)) => Err(BackendError::RateLimited(format!(
                "429: {}",
                response.into_string().unwrap_or_default()
            ))),
            Err(ureq::Error::Status(code, response)) if code >= 500 => {
                Err(BackendError::Transport(format!(
                    "{code}: {}",
                    response.into_string().unwrap_or_default()
                )))
            }
            Err(ureq::Error::Status(code, response)) => Err(BackendError::Malformed(format!(
                "http {code}: {}",
                response.into_string().unwrap_or_default()
            ))),
            Err(ureq::Error::Transport(t)) => Err(BackendError::Transport(t.to_string())),
        }
    }
}
