//! Completion backend abstraction and the OpenAI-compatible HTTP client.

use std::time::Duration;

use async_trait::async_trait;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Wire shape of one completion request (OpenAI chat compatible).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

/// Which (item, run) a call belongs to. Backends that simulate completions
/// use it to derive a per-call seed so results do not depend on scheduling.
#[derive(Debug, Clone, Copy)]
pub struct CallContext<'a> {
    pub item_id: &'a str,
    pub run_index: u32,
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Connection, timeout, or malformed response body. Retryable.
    #[error("transport error: {0}")]
    Transport(String),
    /// HTTP 429. Retryable, optionally after a server-suggested delay.
    #[error("rate limited: {message}")]
    RateLimited {
        message: String,
        retry_after: Option<Duration>,
    },
    /// HTTP 5xx. Retryable.
    #[error("server error (status {status}): {message}")]
    Server { status: u16, message: String },
    /// HTTP 4xx other than 429. Not retryable; the request itself is bad.
    #[error("request rejected (status {status}): {message}")]
    Rejected { status: u16, message: String },
    /// The model declined to answer (content filter). Not retryable.
    #[error("completion refused: {0}")]
    Refused(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_)
                | BackendError::RateLimited { .. }
                | BackendError::Server { .. }
        )
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    /// Returns the assistant message content for one completion call.
    async fn complete(
        &self,
        request: &ChatRequest,
        ctx: CallContext<'_>,
    ) -> Result<String, BackendError>;
}

/// Client for any endpoint speaking the OpenAI chat completions protocol.
/// `endpoint_url` is the full completions URL. The bearer token, if any,
/// comes from the environment (resolved by the caller), never from config
/// file contents.
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(
        endpoint_url: impl Into<String>,
        api_key: Option<String>,
    ) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint_url: endpoint_url.into(),
            api_key,
        })
    }
}

fn parse_retry_after(resp: &reqwest::Response) -> Option<Duration> {
    resp.headers()
        .get("retry-after")?
        .to_str()
        .ok()?
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(
        &self,
        request: &ChatRequest,
        _ctx: CallContext<'_>,
    ) -> Result<String, BackendError> {
        let mut builder = self.client.post(&self.endpoint_url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;

        let status = resp.status();
        if !status.is_success() {
            let retry_after = parse_retry_after(&resp);
            let message = resp.text().await.unwrap_or_default();
            return Err(if status.as_u16() == 429 {
                BackendError::RateLimited {
                    message,
                    retry_after,
                }
            } else if status.is_server_error() {
                BackendError::Server {
                    status: status.as_u16(),
                    message,
                }
            } else {
                BackendError::Rejected {
                    status: status.as_u16(),
                    message,
                }
            });
        }

        let body: serde_json::Value = resp
            .json()
            .await
            .map_err(|e| BackendError::Transport(format!("invalid response body: {e}")))?;
        let choice = body
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| BackendError::Transport("response has no choices".into()))?;
        if choice.get("finish_reason").and_then(|f| f.as_str()) == Some("content_filter") {
            return Err(BackendError::Refused(
                "finish_reason was content_filter".into(),
            ));
        }
        let content = choice
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .unwrap_or("");
        Ok(content.to_owned())
    }
}
