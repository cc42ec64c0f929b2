//! RemoteBackend against a throwaway HTTP server on localhost.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use protegi::llm::{RemoteBackend, RemoteConfig, RetryPolicy};
use protegi::{Backend, BackendError, CompletionRequest};

struct Seen {
    requests: usize,
    auth: Vec<Option<String>>,
    bodies: Vec<serde_json::Value>,
}

/// Serves one scripted (status, body) reply per connection, in order;
/// the last entry repeats.
fn serve(script: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Seen {
        requests: 0,
        auth: vec![],
        bodies: vec![],
    }));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let n = {
                let mut s = log.lock().unwrap();
                s.requests += 1;
                s.auth.push(auth);
                s.bodies.push(serde_json::from_slice(&body).unwrap());
                s.requests
            };
            let (status, reply) = script[(n - 1).min(script.len() - 1)];
            let head = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn config(endpoint: String, key_env: &str) -> RemoteConfig {
    RemoteConfig {
        endpoint,
        model: "test-model".into(),
        api_key_env: key_env.into(),
        max_in_flight: 2,
        timeout_secs: 5,
        retry: RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 1,
            max_backoff_ms: 4,
        },
    }
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Yes"}}]}"#;

#[test]
fn persistent_429_surfaces_as_status_error() {
    let (url, seen) = serve(vec![(429, "{}")]);
    let b = RemoteBackend::new(config(url, "PROTEGI_TEST_UNSET_KEY")).unwrap();
    let err = b.complete(&CompletionRequest::classify("Label:".into())).unwrap_err();
    match err {
        BackendError::Status { status, attempts } => {
            assert_eq!(status, 429);
            assert_eq!(attempts, 4);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().requests, 4);
    assert_eq!(seen.lock().unwrap().auth[0], None);
}

#[test]
fn transient_errors_are_retried() {
    let (url, seen) = serve(vec![(429, "{}"), (503, "{}"), (200, OK)]);
    let b = RemoteBackend::new(config(url, "PROTEGI_TEST_UNSET_KEY2")).unwrap();
    let r = b.complete(&CompletionRequest::classify("Label:".into())).unwrap();
    assert_eq!(r.texts, ["Yes"]);
    let s = seen.lock().unwrap();
    assert_eq!(s.requests, 3);
    assert_eq!(s.bodies[2]["model"], "test-model");
    assert_eq!(s.bodies[2]["temperature"], 0.0);
}

#[test]
fn client_errors_fail_without_retry() {
    let (url, seen) = serve(vec![(400, "{}")]);
    let b = RemoteBackend::new(config(url, "PROTEGI_TEST_UNSET_KEY3")).unwrap();
    let err = b.complete(&CompletionRequest::classify("Label:".into())).unwrap_err();
    assert_eq!(err.status(), Some(400));
    assert_eq!(seen.lock().unwrap().requests, 1);
}

#[test]
fn key_is_sent_but_never_displayed() {
    let secret = "sk-test-0123456789abcdef";
    std::env::set_var("PROTEGI_TEST_KEY_SENT", secret);
    let (url, seen) = serve(vec![(401, "{}")]);
    let b = RemoteBackend::new(config(url, "PROTEGI_TEST_KEY_SENT")).unwrap();
    let err = b.complete(&CompletionRequest::classify("Label:".into())).unwrap_err();
    assert_eq!(seen.lock().unwrap().auth[0].as_deref(), Some(format!("Bearer {secret}").as_str()));
    assert!(!format!("{err} {err:?}").contains(secret));
    assert!(!format!("{b:?}").contains(secret));
}
