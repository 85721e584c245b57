//! HTTP backend against a local one-shot server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use sqlactors::error::BackendError;
use sqlactors::llm::{HttpBackend, RetryPolicy};
use sqlactors::{BackendConfig, ChatBackend, ChatRequest};

struct Seen {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Answers one request per scripted `(status, body)` pair, then stops.
fn serve(script: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let (mut length, mut authorization) = (0, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            seen.push(Seen {
                path: request_line.split_whitespace().nth(1).unwrap().to_owned(),
                authorization,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

fn config(url: &str, retries: u32) -> BackendConfig {
    let mut c = BackendConfig::new("local", "tiny-model");
    c.base_url = url.to_owned();
    c.api_key = sqlactors::llm::Secret::new("k-123");
    c.max_retries = retries;
    c.timeout = 5.0;
    c
}

fn no_wait() -> RetryPolicy {
    RetryPolicy { base: Duration::ZERO, cap: Duration::ZERO, jitter: 0.0 }
}

fn completion(text: &str, prompt: u64, completion: u64) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"prompt_tokens": prompt, "completion_tokens": completion}})
        .to_string()
}

#[test]
fn posts_openai_shaped_request_and_reads_usage() {
    let (url, server) = serve(vec![(200, completion("SELECT 1", 11, 3))]);
    let backend = HttpBackend::new(config(&url, 0)).unwrap();
    let request = ChatRequest::user("How many?").with_system("Be terse.");
    let reply = backend.complete(&request).unwrap();
    assert_eq!((reply.text.as_str(), reply.prompt_tokens, reply.completion_tokens, reply.attempts), ("SELECT 1", 11, 3, 1));

    let seen = server.join().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer k-123"));
    assert_eq!(seen[0].body["model"], "tiny-model");
    let roles: Vec<&str> = seen[0].body["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["system", "user"]);
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, server) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, completion("ok", 1, 1))]);
    let backend = HttpBackend::new(config(&url, 2)).unwrap().with_policy(no_wait());
    let reply = backend.complete(&ChatRequest::user("q")).unwrap();
    assert_eq!((reply.text.as_str(), reply.attempts), ("ok", 3));
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn bad_request_fails_without_retry() {
    let (url, server) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let backend = HttpBackend::new(config(&url, 3)).unwrap().with_policy(no_wait());
    let err = backend.complete(&ChatRequest::user("q")).unwrap_err();
    assert!(matches!(err, BackendError::Rejected { status: 400, .. }), "{err:?}");
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (url, server) = serve(vec![(200, r#"{"choices": []}"#.into())]);
    let backend = HttpBackend::new(config(&url, 0)).unwrap();
    let err = backend.complete(&ChatRequest::user("q")).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
    server.join().unwrap();
}
