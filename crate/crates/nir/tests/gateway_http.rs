//! Exercises the OpenAI-compatible HTTP backend against a loopback server:
//! request shape, bearer auth, response parsing, and 429 retry.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use nir::gateway::{CompletionRequest, Gateway, HttpBackend, RetryPolicy};

struct ReceivedRequest {
    path: String,
    authorization: Option<String>,
    body: String,
}

/// Serves scripted (status, body) responses and reports what it received.
fn serve_scripted(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<ReceivedRequest>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut authorization = None;
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some(value) = line.strip_prefix("authorization: ") {
                    authorization = Some(value.to_string());
                } else if let Some(value) = line.to_lowercase().strip_prefix("content-length: ") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
            let mut body_bytes = vec![0u8; content_length];
            reader.read_exact(&mut body_bytes).unwrap();
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("")
                .to_string();
            let _ = tx.send(ReceivedRequest {
                path,
                authorization,
                body: String::from_utf8_lossy(&body_bytes).to_string(),
            });
            let reason = if status == 200 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), rx)
}

fn request(backend_id: &str) -> CompletionRequest {
    let mut req = CompletionRequest::new(
        backend_id,
        "test-model",
        "Step 3: pick movies (Format: <- ... ->)\nAnswer:".to_string(),
    );
    req.max_tokens = 64;
    req
}

#[test]
fn http_backend_posts_completions_with_bearer_auth() {
    let body = r#"{"choices":[{"text":"1. A: <- B ->","finish_reason":"stop"}]}"#.to_string();
    let (base, rx) = serve_scripted(vec![(200, body)]);
    let backend = HttpBackend::new(&base, Some("sk-test".to_string()));
    let gateway = Gateway::new(Box::new(backend), None, RetryPolicy::immediate());

    let response = gateway.complete(&request("http"), None).unwrap();
    assert_eq!(response.text, "1. A: <- B ->");
    assert_eq!(response.backend_meta, "finish_reason=stop");
    assert_eq!(response.attempts, 1);

    let seen = rx.recv().unwrap();
    assert_eq!(seen.path, "/completions");
    assert_eq!(seen.authorization.as_deref(), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 64);
    assert!(body["prompt"].as_str().unwrap().contains("Step 3"));
}

#[test]
fn rate_limit_then_success_is_retried() {
    let ok = r#"{"choices":[{"text":"recovered","finish_reason":"stop"}]}"#.to_string();
    let (base, _rx) = serve_scripted(vec![
        (429, r#"{"error":"slow down"}"#.to_string()),
        (200, ok),
    ]);
    let backend = HttpBackend::new(&base, None);
    let gateway = Gateway::new(Box::new(backend), None, RetryPolicy::immediate());

    let response = gateway.complete(&request("http"), None).unwrap();
    assert_eq!(response.text, "recovered");
    assert_eq!(response.attempts, 2);
}

#[test]
fn client_error_is_not_retried() {
    let (base, _rx) = serve_scripted(vec![(401, r#"{"error":"bad key"}"#.to_string())]);
    let backend = HttpBackend::new(&base, None);
    let gateway = Gateway::new(Box::new(backend), None, RetryPolicy::immediate());
    match gateway.complete(&request("http"), None) {
        Err(nir::gateway::GatewayError::NonRetryable { attempts, .. }) => assert_eq!(attempts, 1),
        other => panic!("expected non-retryable error, got {other:?}"),
    }
}
