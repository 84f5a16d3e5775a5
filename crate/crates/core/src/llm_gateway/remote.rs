//! Chat-completion client for OpenAI-compatible HTTP endpoints.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{BackendError, LlmBackend, LlmRequest};

/// Exponential backoff: attempt `n` (0-based) waits `base_delay * 2^(n-1)` first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            Duration::ZERO
        } else {
            self.base_delay * 2u32.saturating_pow(attempt - 1)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL such as `http://localhost:8000/v1`, or the full
    /// `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct RemoteBackend {
    id: String,
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Permanent(format!("cannot build HTTP client: {e}")))?;
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(Self {
            id: format!("remote:{}", config.model),
            client,
            url,
            model: config.model,
            api_key: config.api_key,
            retry: config.retry,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            max_tokens: request.max_output_tokens,
            temperature: request.temperature,
        };
        let mut http = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status} from {}: {}", self.url, detail.trim());
            return Err(if is_transient_status(status) {
                BackendError::Transient(msg)
            } else {
                BackendError::Permanent(msg)
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::Permanent(format!("malformed completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Permanent("completion has no choices".into()))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

fn is_transient_status(status: StatusCode) -> bool {
    status == StatusCode::REQUEST_TIMEOUT || status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

impl LlmBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            thread::sleep(self.retry.delay_before(attempt));
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(BackendError::Transient(msg)) => {
                    warn!(attempt = attempt + 1, role = %request.role, "transient LLM failure: {msg}");
                    last = msg;
                }
                Err(other) => return Err(other),
            }
        }
        Err(BackendError::Permanent(format!("gave up after {attempts} attempts: {last}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{Gateway, RoleTag};
    use axum::extract::State;
    use axum::http::StatusCode as AxumStatus;
    use axum::routing::post;
    use axum::{Json, Router};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[derive(Clone)]
    struct Mock {
        hits: Arc<AtomicUsize>,
        fail_first: usize,
        fail_status: u16,
    }

    async fn chat(State(mock): State<Mock>, Json(body): Json<serde_json::Value>) -> (AxumStatus, Json<serde_json::Value>) {
        let n = mock.hits.fetch_add(1, Ordering::SeqCst);
        if n < mock.fail_first {
            return (
                AxumStatus::from_u16(mock.fail_status).unwrap(),
                Json(serde_json::json!({"error": "nope"})),
            );
        }
        let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
        let reply = format!("model={} max={} echo={}", body["model"], body["max_tokens"], prompt);
        (
            AxumStatus::OK,
            Json(serde_json::json!({"choices": [{"message": {"role": "assistant", "content": reply}}]})),
        )
    }

    /// Serves the mock on a background runtime; returns its base URL.
    fn serve(mock: Mock) -> String {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(mock);
                axum::serve(listener, app).await.unwrap();
            });
        });
        format!("http://{}/v1", rx.recv().unwrap())
    }

    fn backend(url: &str) -> RemoteBackend {
        let mut cfg = RemoteConfig::new(url, "tiny");
        cfg.retry.base_delay = Duration::from_millis(5);
        RemoteBackend::new(cfg).unwrap()
    }

    fn mock(fail_first: usize, fail_status: u16) -> Mock {
        Mock {
            hits: Arc::new(AtomicUsize::new(0)),
            fail_first,
            fail_status,
        }
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_before(0), Duration::ZERO);
        assert_eq!(p.delay_before(1), Duration::from_secs(1));
        assert_eq!(p.delay_before(2), Duration::from_secs(2));
        assert_eq!(p.max_attempts, 3);
    }

    #[test]
    fn url_normalization() {
        assert_eq!(backend("http://h/v1/").url(), "http://h/v1/chat/completions");
        assert_eq!(backend("http://h/v1/chat/completions").url(), "http://h/v1/chat/completions");
    }

    #[test]
    fn speaks_chat_completion_wire_format() {
        let m = mock(0, 500);
        let url = serve(m.clone());
        let req = LlmRequest::new(RoleTag::Generator, "hello", 7, 0.0).unwrap();
        let out = backend(&url).generate(&req).unwrap();
        assert_eq!(out, "model=\"tiny\" max=7 echo=hello");
        assert_eq!(m.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_transient_failures() {
        let m = mock(2, 503);
        let url = serve(m.clone());
        let req = LlmRequest::new(RoleTag::Reasoner, "ping", 5, 0.0).unwrap();
        assert!(backend(&url).generate(&req).is_ok());
        assert_eq!(m.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let m = mock(usize::MAX, 503);
        let url = serve(m.clone());
        let gw = Gateway::single(Arc::new(backend(&url)));
        let req = LlmRequest::new(RoleTag::Summarizer, "ping", 5, 0.0).unwrap();
        let err = gw.complete(&req, 1).unwrap_err();
        assert_eq!(err.role, RoleTag::Summarizer);
        assert!(matches!(err.source, BackendError::Permanent(ref m) if m.contains("3 attempts")));
        assert_eq!(m.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let m = mock(usize::MAX, 401);
        let url = serve(m.clone());
        let req = LlmRequest::new(RoleTag::Reasoner, "ping", 5, 0.0).unwrap();
        let err = backend(&url).generate(&req).unwrap_err();
        assert!(matches!(err, BackendError::Permanent(ref m) if m.contains("401")));
        assert_eq!(m.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_endpoint_is_permanent_after_retries() {
        // port 9 (discard) on localhost is closed in the sandbox
        let req = LlmRequest::new(RoleTag::Generator, "ping", 5, 0.0).unwrap();
        let err = backend("http://127.0.0.1:9/v1").generate(&req).unwrap_err();
        assert!(matches!(err, BackendError::Permanent(ref m) if m.contains("gave up")));
    }
}
