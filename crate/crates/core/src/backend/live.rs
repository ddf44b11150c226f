//! OpenAI-compatible chat-completions client with bounded concurrency and retries.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use super::{Backend, BackendDescriptor, Completion, CompletionRequest};
use crate::error::BackendError;

/// Conventional bearer-token variable.
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal POST-JSON transport so tests can inject a fake server.
#[async_trait]
pub trait HttpTransport: Send + Sync {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, BackendError>;
}

#[derive(Debug, Clone, Default)]
pub struct ReqwestTransport {
    client: reqwest::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

#[async_trait]
impl HttpTransport for ReqwestTransport {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, BackendError> {
        let mut request = self.client.post(url).json(body);
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.text().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Exponential backoff: `base * factor^(retry - 1)`, scaled by a jitter
/// factor drawn from `[0.5, 1.0)` when enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_secs(1), factor: 2.0, max_attempts: 6, jitter: true }
    }
}

impl RetryPolicy {
    /// Nominal (pre-jitter) delay before retry number `retry` (1-based).
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(retry.saturating_sub(1) as i32))
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let nominal = self.nominal_delay(retry);
        if self.jitter {
            nominal.mul_f64(rand::rng().random_range(0.5..1.0))
        } else {
            nominal
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    completion_tokens: Option<u64>,
}

pub struct LiveClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    transport: Arc<dyn HttpTransport>,
    permits: Arc<Semaphore>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for LiveClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveClient")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("in_flight_limit", &self.permits.available_permits())
            .finish_non_exhaustive()
    }
}

impl LiveClient {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        transport: Arc<dyn HttpTransport>,
        max_in_flight: usize,
    ) -> Self {
        LiveClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            transport,
            permits: Arc::new(Semaphore::new(max_in_flight.max(1))),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn request_body(&self, request: &CompletionRequest<'_>) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_tokens,
        })
    }

    async fn attempt(&self, url: &str, body: &serde_json::Value) -> Result<Completion, BackendError> {
        let _permit = self.permits.acquire().await.expect("client semaphore never closes");
        let response = self.transport.post_json(url, self.api_key.as_deref(), body).await?;
        if !(200..300).contains(&response.status) {
            return Err(BackendError::Http { status: response.status, body: response.body });
        }
        parse_completion(&response.body)
    }
}

fn parse_completion(body: &str) -> Result<Completion, BackendError> {
    let parsed: ChatResponse = serde_json::from_str(body).map_err(|e| BackendError::Decode(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Decode("response has no choices".into()))?;
    Ok(Completion {
        content: choice.message.content.unwrap_or_default(),
        reasoning: choice.message.reasoning_content.filter(|r| !r.is_empty()),
        completion_tokens: parsed.usage.and_then(|u| u.completion_tokens),
        truncated: choice.finish_reason.as_deref() == Some("length"),
    })
}

#[async_trait]
impl Backend for LiveClient {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::Live { base_url: self.base_url.clone(), model: self.model.clone() }
    }

    async fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = self.request_body(request);
        let mut attempt = 1;
        loop {
            match self.attempt(&url, &body).await {
                Ok(c) => return Ok(c),
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.delay(attempt);
                    warn!(task = %request.tag.task_id, round = request.tag.round, attempt, error = %e, ?delay, "retrying");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(BackendError::RetriesExhausted { attempts: attempt, last: Box::new(e) });
                }
                Err(e) => {
                    debug!(task = %request.tag.task_id, error = %e, "permanent failure");
                    return Err(e);
                }
            }
        }
    }
}
