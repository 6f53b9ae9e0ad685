//! Access to inference servers: sampled chat completions, first-token
//! yes/no log-probabilities and embeddings.
//!
//! [`Gateway`] wraps any [`Backend`] with a global in-flight cap and
//! exponential backoff on transient failures. [`MockBackend`] is a
//! deterministic offline backend for tests and dry runs.

mod http;
mod mock;

pub use http::{HttpBackend, HttpConfig, ReasoningToggle, API_KEY_ENV};
pub(crate) use mock::stable_seed;
pub use mock::{parse_selection_prompt, ChatBehavior, MockBackend, OracleBook, ScoreBehavior, ScriptedSample};

use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use crate::retrieval::Embedder;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("transport error (status {status:?}): {message}")]
    Transport { status: Option<u16>, message: String },
    #[error("backend refused the request: {0}")]
    BackendRefused(String),
    #[error("backend does not return log-probabilities")]
    LogprobsUnsupported,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("could not decode backend response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Connection failures, timeouts, 429 and 5xx are retried.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport { status: None, .. } => true,
            GatewayError::Transport { status: Some(s), .. } => *s == 429 || *s >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub num_samples: usize,
    pub max_tokens: usize,
    pub reasoning_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    pub completions: Vec<String>,
    pub generated_tokens: Vec<u32>,
    /// Set per completion when generation stopped at `max_tokens`.
    pub truncated: Vec<bool>,
    pub prompt_tokens: u32,
    #[serde(skip)]
    pub wall_time: Duration,
    /// The server rejected `n > 1` and samples were requested one by one.
    #[serde(default)]
    pub single_sample_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
        }
    }
}

/// Instruction, query and document of one pointwise relevance judgement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YesNoScoreRequest {
    pub instruction: String,
    pub query: String,
    pub document: String,
}

impl YesNoScoreRequest {
    pub fn system_text(&self) -> &str {
        &self.instruction
    }

    pub fn user_text(&self) -> String {
        format!(
            "Query: {}\nDocument: {}\nIs the document relevant to the marked mention? Answer yes or no.",
            self.query, self.document
        )
    }

    /// Content address of the judgement, used as a score cache key.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.instruction, &self.query, &self.document] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Penalty below the lowest observed alternative for a token missing from top-K.
pub const MISSING_TOKEN_PENALTY: f64 = 10.0;

/// Picks the affirmative and negative log-probabilities out of a top-K list.
/// Case and surrounding whitespace are ignored; the best variant wins.
/// Missing tokens are floored at `min(observed) - 10`.
pub fn extract_yes_no(top: &[TokenLogprob]) -> Result<(f64, f64), GatewayError> {
    if top.is_empty() {
        return Err(GatewayError::LogprobsUnsupported);
    }
    let best = |word: &str| {
        top.iter()
            .filter(|t| t.token.trim().eq_ignore_ascii_case(word))
            .map(|t| t.logprob)
            .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
    };
    let floor = top.iter().map(|t| t.logprob).fold(f64::INFINITY, f64::min) - MISSING_TOKEN_PENALTY;
    Ok((best("yes").unwrap_or(floor), best("no").unwrap_or(floor)))
}

/// A raw inference server. Implementations issue exactly one request per call.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Top-K alternatives for the single next token after the prompt.
    fn first_token_logprobs(&self, system: &str, user: &str, top_k: usize) -> Result<Vec<TokenLogprob>, GatewayError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub top_logprobs: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_concurrency: 8,
            max_retries: 3,
            backoff_base_ms: 250,
            top_logprobs: 20,
        }
    }
}

/// Counting semaphore bounding requests in flight.
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock();
        while *n >= self.max {
            self.freed.wait(&mut n);
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock() -= 1;
        self.0.freed.notify_one();
    }
}

/// Thread-safe front door to a backend.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    limiter: Arc<Limiter>,
    cfg: GatewayConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, cfg: GatewayConfig) -> Self {
        Self {
            limiter: Arc::new(Limiter::new(cfg.max_concurrency)),
            backend,
            cfg,
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn max_concurrency(&self) -> usize {
        self.limiter.max
    }

    fn with_retry<T>(&self, what: &str, mut call: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                call()
            };
            match result {
                Err(e) if e.is_transient() && attempt < self.cfg.max_retries => {
                    let delay = self.cfg.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                    warn!(%e, attempt, what, "transient backend failure, retrying");
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Samples `num_samples` completions. The response holds exactly that
    /// many completions or the call fails.
    pub fn chat_sample(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if req.num_samples == 0 {
            return Err(GatewayError::InvalidRequest("num_samples must be >= 1".into()));
        }
        if req.temperature.is_nan() || req.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        let started = Instant::now();
        let mut resp = match self.with_retry("chat", || self.backend.chat(req)) {
            Err(GatewayError::BackendRefused(reason)) if req.num_samples > 1 => {
                warn!(%reason, "backend refused n > 1; falling back to single-sample requests");
                self.sample_one_by_one(req)?
            }
            other => other?,
        };
        let n = req.num_samples;
        if resp.completions.len() < n {
            return Err(GatewayError::Decode(format!(
                "expected {n} completions, got {}",
                resp.completions.len()
            )));
        }
        resp.completions.truncate(n);
        resp.generated_tokens.resize(n, 0);
        resp.truncated.resize(n, false);
        resp.wall_time = started.elapsed();
        Ok(resp)
    }

    fn sample_one_by_one(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let single = ChatRequest {
            num_samples: 1,
            ..req.clone()
        };
        let mut out = ChatResponse {
            single_sample_fallback: true,
            ..ChatResponse::default()
        };
        for _ in 0..req.num_samples {
            let r = self.with_retry("chat", || self.backend.chat(&single))?;
            let text = r
                .completions
                .into_iter()
                .next()
                .ok_or_else(|| GatewayError::Decode("empty completion list".into()))?;
            out.completions.push(text);
            out.generated_tokens.push(r.generated_tokens.first().copied().unwrap_or(0));
            out.truncated.push(r.truncated.first().copied().unwrap_or(false));
            out.prompt_tokens = out.prompt_tokens.max(r.prompt_tokens);
        }
        Ok(out)
    }

    /// Log-probabilities of "yes" and "no" as the next token.
    pub fn score_yes_no(&self, req: &YesNoScoreRequest) -> Result<(f64, f64), GatewayError> {
        if req.instruction.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty reranking instruction".into()));
        }
        let user = req.user_text();
        let top = self.with_retry("score", || {
            self.backend
                .first_token_logprobs(req.system_text(), &user, self.cfg.top_logprobs)
        })?;
        extract_yes_no(&top)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let vectors = self.with_retry("embed", || self.backend.embed(texts))?;
        if vectors.len() != texts.len() {
            return Err(GatewayError::Decode(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(GatewayError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        Ok(vectors)
    }
}

impl Embedder for Gateway {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Gateway::embed(self, texts)
    }
}

/// Counts whitespace-separated words; the mock's stand-in for tokens.
pub(crate) fn word_count(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}
