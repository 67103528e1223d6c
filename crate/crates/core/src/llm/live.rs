//! HTTP chat-completion backend (OpenAI-compatible wire format).

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, CompletionRequest};

/// Bearer token for the live backend.
pub const TOKEN_ENV: &str = "SPARKLE_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    /// Milliseconds.
    pub request_timeout: u64,
    pub max_retries: u32,
    /// Requests per minute.
    pub rate_limit: u32,
}

fn default_embedding_model() -> String {
    "text-embedding-3-small".into()
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model_name: "gpt-4".into(),
            embedding_model: default_embedding_model(),
            request_timeout: 60_000,
            max_retries: 2,
            rate_limit: 60,
        }
    }
}

pub struct LiveBackend {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    last_request: Mutex<Option<Instant>>,
}

impl LiveBackend {
    pub fn new(config: ProviderConfig) -> Result<Self, BackendError> {
        if config.rate_limit == 0 {
            return Err(BackendError::Fatal("rate_limit must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout))
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(Self {
            token: std::env::var(TOKEN_ENV).ok(),
            config,
            client,
            last_request: Mutex::new(None),
        })
    }

    pub fn max_retries(&self) -> u32 {
        self.config.max_retries
    }

    fn pace(&self) {
        let spacing = Duration::from_secs(60) / self.config.rate_limit;
        let mut last = self.last_request.lock().expect("pacing lock");
        if let Some(prev) = *last {
            let since = prev.elapsed();
            if since < spacing {
                std::thread::sleep(spacing - since);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        self.pace();
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path);
        let mut req = self.client.post(url).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Retriable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Retriable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("HTTP {status}")));
        }
        resp.json::<Value>()
            .map_err(|e| BackendError::Retriable(e.to_string()))
    }
}

impl Backend for LiveBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn measures_latency(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": request.text()}],
        });
        let v = self.post("chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("completion response lacks message content".into()))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = json!({"model": self.config.embedding_model, "input": text});
        let v = self.post("embeddings", &body)?;
        let arr = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Fatal("embedding response lacks data".into()))?;
        arr.iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| BackendError::Fatal("non-numeric embedding value".into()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{PromptParts, Provider};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    #[test]
    fn timeout_retries_then_gives_up() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let accepted = Arc::new(AtomicU32::new(0));
        let counter = accepted.clone();
        std::thread::spawn(move || {
            let mut held = Vec::new();
            for stream in listener.incoming().flatten() {
                counter.fetch_add(1, Ordering::SeqCst);
                held.push(stream);
            }
        });
        let backend = LiveBackend::new(ProviderConfig {
            endpoint: format!("http://{addr}"),
            request_timeout: 150,
            max_retries: 2,
            rate_limit: 60_000,
            ..ProviderConfig::default()
        })
        .unwrap();
        let retries = backend.max_retries();
        let provider = Provider::with_retries(Box::new(backend), retries);
        let req = CompletionRequest::new("t", PromptParts::new("q".into(), String::new(), String::new()));
        let err = provider.complete(&req).unwrap_err();
        assert_eq!(err.code(), "PROVIDER_UNAVAILABLE");
        assert!(matches!(err, crate::llm::ProviderError::Unavailable { attempts: 3, .. }));
        assert_eq!(accepted.load(Ordering::SeqCst), 3);
    }
}
