//! HTTP backend tests against a minimal in-process stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use clipgraph_core::backend::http::{HttpChatBackend, HttpConfig, HttpEmbedBackend, RetryPolicy};
use clipgraph_core::backend::{
    BackendError, BackendTrace, ChatBackend, ChatRequest, EmbedBackend, EmbedRequest,
};

struct StubResponse {
    status: u16,
    body: String,
}

/// Serve the scripted responses in order, one per connection, then stop.
fn spawn_stub(responses: Vec<StubResponse>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().expect("addr");
    let handle = std::thread::spawn(move || {
        let mut request_bodies = Vec::new();
        for response in responses {
            let (stream, _) = listener.accept().expect("accept");
            let body = handle_connection(stream, &response);
            request_bodies.push(body);
        }
        request_bodies
    });
    (format!("http://{addr}/v1"), handle)
}

fn handle_connection(mut stream: TcpStream, response: &StubResponse) -> String {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).expect("read header");
        let trimmed = line.trim();
        if trimmed.is_empty() {
            break;
        }
        if let Some(value) = trimmed.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).expect("read body");
    let reason = if response.status == 200 { "OK" } else { "Error" };
    let payload = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    stream.write_all(payload.as_bytes()).expect("write response");
    String::from_utf8_lossy(&body).into_owned()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff: Duration::from_millis(5),
        multiplier: 2.0,
    }
}

fn chat_backend(base_url: &str, trace: Arc<BackendTrace>) -> HttpChatBackend {
    let mut config = HttpConfig::new(base_url, "stub-model");
    config.retry = fast_retry();
    config.timeout = Duration::from_secs(5);
    HttpChatBackend::new(config, trace).expect("chat backend")
}

#[test]
fn chat_returns_the_server_text() {
    let body = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": "the fixed text"}}]
    });
    let (url, server) = spawn_stub(vec![StubResponse {
        status: 200,
        body: body.to_string(),
    }]);
    let trace = BackendTrace::new();
    let backend = chat_backend(&url, trace.clone());
    let out = backend.chat(&ChatRequest::text("hello")).unwrap();
    assert_eq!(out, "the fixed text");
    assert_eq!(trace.counts().chat_calls, 1);
    let requests = server.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(sent["model"], "stub-model");
    assert_eq!(sent["messages"][0]["content"], "hello");
}

#[test]
fn transient_failures_are_retried() {
    let ok = serde_json::json!({
        "choices": [{"message": {"content": "after retries"}}]
    });
    let (url, server) = spawn_stub(vec![
        StubResponse { status: 500, body: "boom".into() },
        StubResponse { status: 429, body: "slow down".into() },
        StubResponse { status: 200, body: ok.to_string() },
    ]);
    let backend = chat_backend(&url, BackendTrace::new());
    let out = backend.chat(&ChatRequest::text("q")).unwrap();
    assert_eq!(out, "after retries");
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried_and_carry_an_excerpt() {
    let (url, server) = spawn_stub(vec![StubResponse {
        status: 404,
        body: "no such model".into(),
    }]);
    let backend = chat_backend(&url, BackendTrace::new());
    let err = backend.chat(&ChatRequest::text("q")).unwrap_err();
    match err {
        BackendError::Http { status, excerpt } => {
            assert_eq!(status, 404);
            assert!(excerpt.contains("no such model"));
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn malformed_payload_is_a_protocol_error() {
    let (url, server) = spawn_stub(vec![StubResponse {
        status: 200,
        body: r#"{"not": "a chat response"}"#.into(),
    }]);
    let backend = chat_backend(&url, BackendTrace::new());
    let err = backend.chat(&ChatRequest::text("q")).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
    server.join().unwrap();
}

#[test]
fn embeddings_are_reordered_by_index() {
    let body = serde_json::json!({
        "data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]
    });
    let (url, server) = spawn_stub(vec![StubResponse {
        status: 200,
        body: body.to_string(),
    }]);
    let trace = BackendTrace::new();
    let mut config = HttpConfig::new(&url, "stub-embed");
    config.retry = fast_retry();
    let backend = HttpEmbedBackend::new(config, trace.clone()).unwrap();
    let out = backend
        .embed(&EmbedRequest::new(vec!["a", "b"]).unwrap())
        .unwrap();
    assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert_eq!(trace.counts().embed_calls, 1);
    let requests = server.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(sent["input"], serde_json::json!(["a", "b"]));
}

#[test]
fn embedding_count_mismatch_is_a_protocol_error() {
    let body = serde_json::json!({
        "data": [{"index": 0, "embedding": [1.0]}]
    });
    let (url, server) = spawn_stub(vec![StubResponse {
        status: 200,
        body: body.to_string(),
    }]);
    let mut config = HttpConfig::new(&url, "stub-embed");
    config.retry = fast_retry();
    let backend = HttpEmbedBackend::new(config, BackendTrace::new()).unwrap();
    let err = backend
        .embed(&EmbedRequest::new(vec!["a", "b"]).unwrap())
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
    server.join().unwrap();
}
