use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use memtransfer_core::llm::{
    AdapterConfig, AdapterError, CompletionClient, CompletionRequest, HttpClient, ReplayClient,
};

enum Reply {
    Status(u16, String),
    Stall,
}

fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

/// Serves `replies` in order, one per connection, and records each raw request.
fn mock_server(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for reply in replies {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                head.push_str(&line);
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            log.lock()
                .unwrap()
                .push(format!("{head}\r\n{}", String::from_utf8_lossy(&body)));
            let mut stream = stream;
            match reply {
                Reply::Status(code, body) => {
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                }
                Reply::Stall => thread::sleep(Duration::from_secs(3)),
            }
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn config(endpoint: String, auth_env: Option<&str>) -> AdapterConfig {
    AdapterConfig {
        endpoint,
        model: "test-model".into(),
        auth_env: auth_env.map(str::to_string),
        retries: 2,
        backoff_ms: 10,
        log_path: None,
    }
}

fn request() -> CompletionRequest {
    CompletionRequest::new("system", "distil this")
}

#[test]
fn request_defaults_match_the_distiller_contract() {
    let r = request();
    assert_eq!(
        (r.max_tokens, r.temperature, r.timeout_secs),
        (4096, 0.5, 60.0)
    );
}

#[test]
fn successful_exchange_sends_chat_payload() {
    let (url, seen) = mock_server(vec![Reply::Status(200, chat_body("Insight 1. x"))]);
    let client = HttpClient::new(config(url, None));
    assert_eq!(client.complete(&request()).unwrap(), "Insight 1. x");
    let raw = seen.lock().unwrap()[0].clone();
    let body: serde_json::Value =
        serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["max_tokens"], 4096);
    assert_eq!(body["messages"][1]["content"], "distil this");
}

#[test]
fn transient_errors_are_retried() {
    let (url, seen) = mock_server(vec![
        Reply::Status(500, "{}".into()),
        Reply::Status(503, "{}".into()),
        Reply::Status(200, chat_body("ok")),
    ]);
    let client = HttpClient::new(config(url, None));
    assert_eq!(client.complete(&request()).unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(client.exchanges()[0].attempts, 3);
}

#[test]
fn retries_are_bounded() {
    let (url, _) = mock_server((0..3).map(|_| Reply::Status(500, "boom".into())).collect());
    let client = HttpClient::new(config(url, None));
    let err = client.complete(&request()).unwrap_err();
    assert_eq!(
        err,
        AdapterError::Http {
            status: 500,
            body: "boom".into()
        }
    );
    assert_eq!(client.exchanges()[0].attempts, 3);
}

#[test]
fn slow_endpoint_times_out() {
    let (url, _) = mock_server(vec![Reply::Stall]);
    let client = HttpClient::new(config(url, None));
    let mut req = request();
    req.timeout_secs = 0.3;
    assert_eq!(
        client.complete(&req).unwrap_err(),
        AdapterError::Timeout(0.3)
    );
}

#[test]
fn rejected_credentials_are_an_auth_error() {
    let (url, _) = mock_server(vec![Reply::Status(401, "{}".into())]);
    let client = HttpClient::new(config(url, None));
    assert!(matches!(
        client.complete(&request()),
        Err(AdapterError::Auth(_))
    ));
}

#[test]
fn missing_credential_variable_fails_before_sending() {
    let (url, seen) = mock_server(vec![]);
    let client = HttpClient::new(config(url, Some("MEMTRANSFER_TEST_UNSET_KEY")));
    assert!(matches!(
        client.complete(&request()),
        Err(AdapterError::Auth(_))
    ));
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn closed_port_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let client = HttpClient::new(config(format!("http://127.0.0.1:{port}/"), None));
    assert!(matches!(
        client.complete(&request()),
        Err(AdapterError::Unreachable(_))
    ));
}

#[test]
fn malformed_reply_is_a_decode_error() {
    let (url, _) = mock_server(vec![Reply::Status(200, "{\"choices\": []}".into())]);
    let client = HttpClient::new(config(url, None));
    assert!(matches!(
        client.complete(&request()),
        Err(AdapterError::Decode(_))
    ));
}

#[test]
fn log_redacts_the_credential_and_replays() {
    std::env::set_var("MEMTRANSFER_TEST_KEY", "sk-very-secret");
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("llm.jsonl");
    let (url, seen) = mock_server(vec![Reply::Status(200, chat_body("Insight 1. reuse"))]);
    let mut cfg = config(url, Some("MEMTRANSFER_TEST_KEY"));
    cfg.log_path = Some(log_path.clone());
    let client = HttpClient::new(cfg);
    client.complete(&request()).unwrap();

    let sent = seen.lock().unwrap()[0].to_ascii_lowercase();
    assert!(sent.contains("authorization: bearer sk-very-secret"));
    let logged = std::fs::read_to_string(&log_path).unwrap();
    assert!(!logged.contains("sk-very-secret"));
    assert!(logged.contains("[REDACTED]"));

    let replay = ReplayClient::from_jsonl(&logged).unwrap();
    assert_eq!(replay.complete(&request()).unwrap(), "Insight 1. reuse");
    let other = CompletionRequest::new("system", "something else");
    assert_eq!(
        replay.complete(&other).unwrap_err(),
        AdapterError::NotRecorded
    );
}
