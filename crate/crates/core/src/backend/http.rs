//! HTTP backends speaking the widely supported chat-completion and
//! embedding wire shapes.
//!
//! Clip references are rendered as frame-range text ahead of the prompt;
//! attachment fields for servers that accept inline media are out of
//! scope here. Transport failures and 429/5xx responses are retried
//! with exponential backoff; other failures surface immediately with a
//! body excerpt.

use std::time::{Duration, Instant};

use serde::Deserialize;
use std::sync::Arc;

use super::{
    BackendError, BackendTrace, Capability, ChatBackend, ChatRequest, EmbedBackend, EmbedRequest,
    ResponseFormatHint,
};

/// Default embedding model identifier.
pub const DEFAULT_EMBED_MODEL: &str = "BAAI/bge-large-en-v1.5";

/// Retry schedule for transient failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
        }
    }
}

/// Connection settings shared by both HTTP backends.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to and including the API root, e.g. `http://host/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

fn excerpt(body: &str) -> String {
    let trimmed = body.trim();
    if trimmed.len() <= 200 {
        trimmed.to_string()
    } else {
        let cut = trimmed
            .char_indices()
            .take_while(|(i, _)| *i < 200)
            .last()
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        format!("{}...", &trimmed[..cut])
    }
}

fn post_with_retry(
    client: &reqwest::blocking::Client,
    config: &HttpConfig,
    url: &str,
    body: &serde_json::Value,
) -> Result<String, BackendError> {
    let mut backoff = config.retry.initial_backoff;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let result = send_once(client, config, url, body);
        match result {
            Ok(text) => return Ok(text),
            Err(err) if err.is_retryable() && attempt < config.retry.max_attempts => {
                log::warn!("attempt {attempt} against {url} failed ({err}); retrying");
                std::thread::sleep(backoff);
                backoff = backoff.mul_f64(config.retry.multiplier);
            }
            Err(err) => return Err(err),
        }
    }
}

fn send_once(
    client: &reqwest::blocking::Client,
    config: &HttpConfig,
    url: &str,
    body: &serde_json::Value,
) -> Result<String, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = &config.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req
        .send()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .text()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(BackendError::Http {
            status,
            excerpt: excerpt(&text),
        });
    }
    Ok(text)
}

/// Chat completion against `{base_url}/chat/completions`.
pub struct HttpChatBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    trace: Arc<BackendTrace>,
}

impl HttpChatBackend {
    pub fn new(config: HttpConfig, trace: Arc<BackendTrace>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client, trace })
    }

    fn render_content(req: &ChatRequest) -> String {
        if req.media_refs.is_empty() {
            return req.prompt_text.clone();
        }
        let mut lines: Vec<String> = req
            .media_refs
            .iter()
            .map(|m| {
                format!(
                    "[Video {} frames {}..{})]",
                    m.video_id, m.frame_start, m.frame_end
                )
            })
            .collect();
        lines.push(String::new());
        lines.push(req.prompt_text.clone());
        lines.join("\n")
    }
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl ChatBackend for HttpChatBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let started = Instant::now();
        let url = format!("{}/chat/completions", self.config.base_url);
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": Self::render_content(req)}],
        });
        if req.response_format_hint == ResponseFormatHint::Json {
            body["response_format"] = serde_json::json!({"type": "json_object"});
        }
        let req_bytes = body.to_string().len();
        let text = post_with_retry(&self.client, &self.config, &url, &body)?;
        let parsed: ChatCompletionResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("{e}; body: {}", excerpt(&text))))?;
        let content = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| {
                BackendError::Protocol(format!("no choices in response: {}", excerpt(&text)))
            })?;
        self.trace
            .record(Capability::Chat, started, req_bytes, content.len());
        Ok(content)
    }
}

/// Embeddings against `{base_url}/embeddings`.
pub struct HttpEmbedBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    trace: Arc<BackendTrace>,
}

impl HttpEmbedBackend {
    pub fn new(config: HttpConfig, trace: Arc<BackendTrace>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client, trace })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl EmbedBackend for HttpEmbedBackend {
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        let started = Instant::now();
        let url = format!("{}/embeddings", self.config.base_url);
        let body = serde_json::json!({
            "model": self.config.model,
            "input": req.texts(),
        });
        let req_bytes = body.to_string().len();
        let text = post_with_retry(&self.client, &self.config, &url, &body)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("{e}; body: {}", excerpt(&text))))?;
        if parsed.data.len() != req.texts().len() {
            return Err(BackendError::Protocol(format!(
                "expected {} embeddings, got {}",
                req.texts().len(),
                parsed.data.len()
            )));
        }
        let mut items: Vec<(usize, Vec<f64>)> = parsed
            .data
            .into_iter()
            .enumerate()
            .map(|(i, item)| (item.index.unwrap_or(i), item.embedding))
            .collect();
        items.sort_by_key(|(i, _)| *i);
        let vectors: Vec<Vec<f64>> = items.into_iter().map(|(_, v)| v).collect();
        if vectors
            .iter()
            .any(|v| v.is_empty() || v.iter().any(|x| !x.is_finite()))
        {
            return Err(BackendError::Protocol(
                "embedding vector empty or non-finite".into(),
            ));
        }
        let resp_bytes = text.len();
        self.trace
            .record(Capability::Embed, started, req_bytes, resp_bytes);
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excerpt_truncates_long_bodies() {
        let long = "x".repeat(500);
        let e = excerpt(&long);
        assert!(e.len() <= 204);
        assert!(e.ends_with("..."));
        assert_eq!(excerpt("short"), "short");
    }

    #[test]
    fn media_refs_render_as_frame_ranges() {
        let req = ChatRequest::text("describe")
            .with_media(vec![super::super::MediaRef {
                video_id: "v1".into(),
                frame_start: 64,
                frame_end: 128,
            }])
            .unwrap();
        let content = HttpChatBackend::render_content(&req);
        assert!(content.starts_with("[Video v1 frames 64..128)]"));
        assert!(content.ends_with("describe"));
    }
}
