use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, ChatResponse, GatewayError, TokenLogprob};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "LINKFORGE_API_KEY";

/// How `reasoning_enabled = false` is communicated to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReasoningToggle {
    /// `"chat_template_kwargs": {"enable_thinking": false}` (vLLM, SGLang).
    #[default]
    ChatTemplateKwargs,
    /// Appends a marker such as `/no_think` to the user message.
    PromptSuffix { suffix: String },
    /// Sends nothing; the server decides.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    /// Model used for `/embeddings`; defaults to `model`.
    pub embedding_model: Option<String>,
    /// Model used for yes/no scoring; defaults to `model`.
    pub reranker_model: Option<String>,
    pub timeout_secs: u64,
    pub reasoning_toggle: ReasoningToggle,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "default".into(),
            embedding_model: None,
            reranker_model: None,
            timeout_secs: 600,
            reasoning_toggle: ReasoningToggle::default(),
        }
    }
}

/// OpenAI-compatible chat-completions and embeddings client.
pub struct HttpBackend {
    cfg: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Reads the bearer token from `LINKFORGE_API_KEY` when set.
    pub fn new(cfg: HttpConfig) -> Self {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(cfg, api_key)
    }

    pub fn with_api_key(cfg: HttpConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, api_key, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut request = self.agent.post(&self.url(path)).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let payload = serde_json::to_vec(body).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let mut response = request.send(&payload[..]).map_err(|e| GatewayError::Transport {
            status: None,
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport {
                status: Some(status),
                message: e.to_string(),
            })?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| GatewayError::Decode(e.to_string())),
            429 | 500..=599 => Err(GatewayError::Transport {
                status: Some(status),
                message: text,
            }),
            _ => Err(GatewayError::BackendRefused(format!("HTTP {status}: {text}"))),
        }
    }
}

/// Request body for `/chat/completions`.
pub(crate) fn chat_body(model: &str, req: &ChatRequest, toggle: &ReasoningToggle, top_logprobs: Option<usize>) -> Value {
    let mut user = req.user_text.clone();
    if !req.reasoning_enabled {
        if let ReasoningToggle::PromptSuffix { suffix } = toggle {
            user.push('\n');
            user.push_str(suffix);
        }
    }
    let mut body = json!({
        "model": model,
        "messages": [
            {"role": "system", "content": req.system_text},
            {"role": "user", "content": user},
        ],
        "temperature": req.temperature,
        "n": req.num_samples,
        "max_tokens": req.max_tokens,
        "logprobs": top_logprobs.is_some(),
    });
    if let Some(k) = top_logprobs {
        body["top_logprobs"] = json!(k);
    }
    if !req.reasoning_enabled && *toggle == ReasoningToggle::ChatTemplateKwargs {
        body["chat_template_kwargs"] = json!({"enable_thinking": false});
    }
    body
}

#[derive(Deserialize)]
struct WireChat {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    message: Option<WireMessage>,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireTokenLogprobs>>,
}

#[derive(Deserialize)]
struct WireTokenLogprobs {
    #[serde(default)]
    top_logprobs: Vec<WireTop>,
}

#[derive(Deserialize)]
struct WireTop {
    token: String,
    logprob: f64,
}

/// Reads completions and usage. Usage only reports a total completion
/// count, so it is spread evenly over the choices.
pub(crate) fn parse_chat_response(value: Value) -> Result<ChatResponse, GatewayError> {
    let wire: WireChat = serde_json::from_value(value).map_err(|e| GatewayError::Decode(e.to_string()))?;
    let n = wire.choices.len();
    let (prompt_tokens, completion_tokens) = wire
        .usage
        .map_or((0, 0), |u| (u.prompt_tokens, u.completion_tokens));
    let generated_tokens = (0..n as u32)
        .map(|i| {
            let n = n as u32;
            completion_tokens / n + u32::from(i < completion_tokens % n)
        })
        .collect();
    Ok(ChatResponse {
        truncated: wire
            .choices
            .iter()
            .map(|c| c.finish_reason.as_deref() == Some("length"))
            .collect(),
        completions: wire
            .choices
            .into_iter()
            .map(|c| c.message.and_then(|m| m.content).unwrap_or_default())
            .collect(),
        generated_tokens,
        prompt_tokens,
        ..ChatResponse::default()
    })
}

pub(crate) fn parse_first_token_logprobs(value: Value) -> Result<Vec<TokenLogprob>, GatewayError> {
    let wire: WireChat = serde_json::from_value(value).map_err(|e| GatewayError::Decode(e.to_string()))?;
    let top = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.logprobs)
        .and_then(|l| l.content)
        .and_then(|c| c.into_iter().next())
        .map(|t| t.top_logprobs)
        .unwrap_or_default();
    if top.is_empty() {
        return Err(GatewayError::LogprobsUnsupported);
    }
    Ok(top.into_iter().map(|t| TokenLogprob::new(t.token, t.logprob)).collect())
}

#[derive(Deserialize)]
struct WireEmbeddings {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

pub(crate) fn parse_embeddings(value: Value) -> Result<Vec<Vec<f32>>, GatewayError> {
    let mut wire: WireEmbeddings = serde_json::from_value(value).map_err(|e| GatewayError::Decode(e.to_string()))?;
    if wire.data.iter().all(|d| d.index.is_some()) {
        wire.data.sort_by_key(|d| d.index);
    }
    Ok(wire.data.into_iter().map(|d| d.embedding).collect())
}

impl Backend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = Instant::now();
        let body = chat_body(&self.cfg.model, req, &self.cfg.reasoning_toggle, None);
        let mut resp = parse_chat_response(self.post("chat/completions", &body)?)?;
        resp.wall_time = started.elapsed();
        Ok(resp)
    }

    fn first_token_logprobs(&self, system: &str, user: &str, top_k: usize) -> Result<Vec<TokenLogprob>, GatewayError> {
        let req = ChatRequest {
            system_text: system.to_string(),
            user_text: user.to_string(),
            temperature: 0.0,
            num_samples: 1,
            max_tokens: 1,
            reasoning_enabled: false,
        };
        let model = self.cfg.reranker_model.as_deref().unwrap_or(&self.cfg.model);
        let body = chat_body(model, &req, &self.cfg.reasoning_toggle, Some(top_k.max(20)));
        parse_first_token_logprobs(self.post("chat/completions", &body)?)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let model = self.cfg.embedding_model.as_deref().unwrap_or(&self.cfg.model);
        let body = json!({"model": model, "input": texts});
        parse_embeddings(self.post("embeddings", &body)?)
    }
}
