//! Optional chat-completions client for real LLM backends.
//!
//! Nothing in the scripted pipeline depends on this module. It exists so an
//! LLM can stand in for the rule distiller, with every request captured in a
//! redacted log that [`ReplayClient`] can serve back offline.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: f64,
}

impl CompletionRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            max_tokens: 4096,
            temperature: 0.5,
            timeout_secs: 60.0,
        }
    }
}

/// Where and how to reach the backend. Only the *name* of the credential
/// variable is stored, so the config can be written into artifacts as is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub endpoint: String,
    pub model: String,
    pub auth_env: Option<String>,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Request log (JSONL). Credentials never appear in it.
    pub log_path: Option<PathBuf>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "qwen-plus".into(),
            auth_env: Some("MEMTRANSFER_API_KEY".into()),
            retries: 2,
            backoff_ms: 200,
            log_path: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("request timed out after {0} s")]
    Timeout(f64),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("no recorded response for request")]
    NotRecorded,
}

impl AdapterError {
    fn is_transient(&self) -> bool {
        matches!(self, AdapterError::Http { status, .. } if *status >= 500 || *status == 429)
    }
}

pub trait CompletionClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, AdapterError>;
}

/// One line of the request log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub model: String,
    pub request: CompletionRequest,
    pub authorization: Option<String>,
    pub attempts: u32,
    pub response: Option<String>,
    pub error: Option<String>,
}

pub struct HttpClient {
    config: AdapterConfig,
    client: reqwest::blocking::Client,
    log: Mutex<Vec<ExchangeRecord>>,
}

impl HttpClient {
    pub fn new(config: AdapterConfig) -> Self {
        Self {
            config,
            client: reqwest::blocking::Client::new(),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Exchanges made so far, redacted.
    pub fn exchanges(&self) -> Vec<ExchangeRecord> {
        self.log.lock().expect("log lock").clone()
    }

    fn token(&self) -> Result<Option<String>, AdapterError> {
        match &self.config.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| AdapterError::Auth(format!("environment variable {var} is not set"))),
        }
    }

    fn attempt(
        &self,
        request: &CompletionRequest,
        token: Option<&str>,
    ) -> Result<String, AdapterError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let mut builder = self
            .client
            .post(&self.config.endpoint)
            .timeout(Duration::from_secs_f64(request.timeout_secs))
            .json(&body);
        if let Some(t) = token {
            builder = builder.bearer_auth(t);
        }
        let response = builder
            .send()
            .map_err(|e| self.transport_error(e, request))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| self.transport_error(e, request))?;
        match status {
            200..=299 => extract_content(&text),
            401 | 403 => Err(AdapterError::Auth(format!("status {status}"))),
            _ => Err(AdapterError::Http { status, body: text }),
        }
    }

    fn transport_error(&self, e: reqwest::Error, request: &CompletionRequest) -> AdapterError {
        if e.is_timeout() {
            AdapterError::Timeout(request.timeout_secs)
        } else {
            AdapterError::Unreachable(e.to_string())
        }
    }

    fn write_log(&self, record: ExchangeRecord) {
        if let Some(path) = &self.config.log_path {
            let line = serde_json::to_string(&record).expect("record serializes");
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
                let _ = writeln!(f, "{line}");
            }
        }
        self.log.lock().expect("log lock").push(record);
    }
}

fn extract_content(text: &str) -> Result<String, AdapterError> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| AdapterError::Decode(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| AdapterError::Decode("missing choices[0].message.content".into()))
}

impl CompletionClient for HttpClient {
    /// Retries transient failures (5xx, 429) up to `retries` times with
    /// linear backoff; timeouts and auth failures are returned immediately.
    fn complete(&self, request: &CompletionRequest) -> Result<String, AdapterError> {
        let token = self.token()?;
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match self.attempt(request, token.as_deref()) {
                Err(e) if e.is_transient() && attempts <= self.config.retries => {
                    thread::sleep(Duration::from_millis(
                        self.config.backoff_ms * u64::from(attempts),
                    ));
                }
                other => break other,
            }
        };
        self.write_log(ExchangeRecord {
            model: self.config.model.clone(),
            request: request.clone(),
            authorization: token.map(|_| "[REDACTED]".to_string()),
            attempts,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result
    }
}

/// Serves responses from a request log, matching on the full request.
pub struct ReplayClient {
    records: Vec<ExchangeRecord>,
}

impl ReplayClient {
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn from_records(records: Vec<ExchangeRecord>) -> Self {
        Self { records }
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, AdapterError> {
        self.records
            .iter()
            .find(|r| r.request == *request && r.response.is_some())
            .and_then(|r| r.response.clone())
            .ok_or(AdapterError::NotRecorded)
    }
}
