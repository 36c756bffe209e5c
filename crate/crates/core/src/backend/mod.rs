//! Contracts for the two external model capabilities — chat completion
//! over text plus clip references, and text embedding — together with
//! call tracing. Deterministic mock implementations live in [`mock`];
//! HTTP-backed ones in [`http`].

pub mod http;
pub mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference to a clip a backend may attach as visual context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub video_id: String,
    pub frame_start: u64,
    pub frame_end: u64,
}

/// Requested shape of the chat response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormatHint {
    #[default]
    FreeText,
    Json,
}

/// One chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt_text: String,
    pub media_refs: Vec<MediaRef>,
    pub response_format_hint: ResponseFormatHint,
}

impl ChatRequest {
    pub fn text(prompt: impl Into<String>) -> Self {
        Self {
            prompt_text: prompt.into(),
            media_refs: Vec::new(),
            response_format_hint: ResponseFormatHint::FreeText,
        }
    }

    pub fn with_media(mut self, refs: Vec<MediaRef>) -> Result<Self, BackendError> {
        if let Some(first) = refs.first() {
            if refs.iter().any(|r| r.video_id != first.video_id) {
                return Err(BackendError::InvalidRequest(
                    "media refs must all belong to one video".into(),
                ));
            }
        }
        self.media_refs = refs;
        Ok(self)
    }

    pub fn with_format(mut self, hint: ResponseFormatHint) -> Self {
        self.response_format_hint = hint;
        self
    }
}

/// One embedding request. Construction rejects empty inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    texts: Vec<String>,
}

impl EmbedRequest {
    pub fn new<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Result<Self, BackendError> {
        let texts: Vec<String> = texts.into_iter().map(Into::into).collect();
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("empty text list".into()));
        }
        if texts.iter().any(|t| t.is_empty()) {
            return Err(BackendError::InvalidRequest("empty string in text list".into()));
        }
        Ok(Self { texts })
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }
}

/// Backend failure classification. Transport errors are retryable;
/// protocol and request errors are not.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),

    #[error("backend returned status {status}: {excerpt}")]
    Http { status: u16, excerpt: String },

    #[error("malformed backend payload: {0}")]
    Protocol(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("missing fixture: {0}")]
    MissingFixture(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Chat completion over text plus clip references.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

/// Text embedding; one vector per input text, constant dimension.
pub trait EmbedBackend: Send + Sync {
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Which capability a traced call used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Chat,
    Embed,
}

/// In-memory record of one backend call.
#[derive(Debug, Clone)]
pub struct CallRecord {
    pub capability: Capability,
    pub latency: std::time::Duration,
    pub request_bytes: usize,
    pub response_bytes: usize,
}

/// Monotone call counters plus per-call latency/size records, shared by
/// the backends of one engine instance. Updated atomically; safe for
/// concurrent callers.
#[derive(Debug, Default)]
pub struct BackendTrace {
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
    records: Mutex<Vec<CallRecord>>,
}

/// Counter snapshot at one point in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceCounts {
    pub chat_calls: u64,
    pub embed_calls: u64,
}

impl TraceCounts {
    pub fn delta_since(&self, earlier: TraceCounts) -> TraceCounts {
        TraceCounts {
            chat_calls: self.chat_calls - earlier.chat_calls,
            embed_calls: self.embed_calls - earlier.embed_calls,
        }
    }
}

impl BackendTrace {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn record(&self, capability: Capability, started: Instant, req_bytes: usize, resp_bytes: usize) {
        match capability {
            Capability::Chat => self.chat_calls.fetch_add(1, Ordering::SeqCst),
            Capability::Embed => self.embed_calls.fetch_add(1, Ordering::SeqCst),
        };
        let mut records = self.records.lock().expect("trace lock poisoned");
        records.push(CallRecord {
            capability,
            latency: started.elapsed(),
            request_bytes: req_bytes,
            response_bytes: resp_bytes,
        });
    }

    pub fn counts(&self) -> TraceCounts {
        TraceCounts {
            chat_calls: self.chat_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
        }
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().expect("trace lock poisoned").clone()
    }
}

/// A chat + embedding backend pair sharing one trace.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub embed: Arc<dyn EmbedBackend>,
    pub trace: Arc<BackendTrace>,
}

impl Backends {
    pub fn new(
        chat: Arc<dyn ChatBackend>,
        embed: Arc<dyn EmbedBackend>,
        trace: Arc<BackendTrace>,
    ) -> Self {
        Self { chat, embed, trace }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_request_rejects_empty_inputs() {
        assert!(EmbedRequest::new(Vec::<String>::new()).is_err());
        assert!(EmbedRequest::new(vec!["ok", ""]).is_err());
        assert!(EmbedRequest::new(vec!["ok"]).is_ok());
    }

    #[test]
    fn media_refs_must_share_a_video() {
        let refs = vec![
            MediaRef {
                video_id: "a".into(),
                frame_start: 0,
                frame_end: 64,
            },
            MediaRef {
                video_id: "b".into(),
                frame_start: 64,
                frame_end: 128,
            },
        ];
        assert!(ChatRequest::text("p").with_media(refs).is_err());
    }

    #[test]
    fn trace_counters_are_monotone() {
        let trace = BackendTrace::new();
        let t0 = Instant::now();
        trace.record(Capability::Chat, t0, 10, 20);
        trace.record(Capability::Embed, t0, 5, 5);
        trace.record(Capability::Chat, t0, 1, 1);
        let counts = trace.counts();
        assert_eq!(counts.chat_calls, 2);
        assert_eq!(counts.embed_calls, 1);
        assert_eq!(trace.records().len(), 3);
    }

    #[test]
    fn retryability_classification() {
        assert!(BackendError::Transport("t".into()).is_retryable());
        assert!(BackendError::Http { status: 429, excerpt: String::new() }.is_retryable());
        assert!(BackendError::Http { status: 503, excerpt: String::new() }.is_retryable());
        assert!(!BackendError::Http { status: 404, excerpt: String::new() }.is_retryable());
        assert!(!BackendError::Protocol("p".into()).is_retryable());
    }
}
