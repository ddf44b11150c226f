//! Completion backends: the live OpenAI-compatible client and the seeded mock.

mod live;
mod mock;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use live::{HttpResponse, HttpTransport, LiveClient, ReqwestTransport, RetryPolicy, DEFAULT_API_KEY_ENV};
pub use mock::{mock_complete, MockBackend, MOCK_MODEL_ID};

use crate::domain::{MockModelSpec, RoundResponse, SamplingParams, TaskSpec, TokenSource};
use crate::error::BackendError;
use crate::extraction::extract_final_answer;
use crate::prompting::{join_reasoning, split_with_reasoning};
use crate::verification::Verifier;

/// Identifies one cell of a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoundTag {
    pub task_id: String,
    pub chain_index: u32,
    pub round: u32,
}

/// Everything a backend may need to answer one round.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub task: &'a TaskSpec,
    pub prompt: &'a str,
    pub params: &'a SamplingParams,
    pub tag: RoundTag,
    /// Correctness of the previous round in this chain; `None` in round 1.
    pub prev_correct: Option<bool>,
}

/// Raw backend output before splitting and scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    /// Separately delivered reasoning trace, if the server returns one.
    pub reasoning: Option<String>,
    pub completion_tokens: Option<u64>,
    /// The server stopped at `max_tokens`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    Mock { spec: MockModelSpec },
    Live { base_url: String, model: String },
}

impl BackendDescriptor {
    pub fn model_id(&self) -> &str {
        match self {
            BackendDescriptor::Mock { .. } => MOCK_MODEL_ID,
            BackendDescriptor::Live { model, .. } => model,
        }
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    async fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError>;
}

#[async_trait]
impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    async fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        (**self).complete(request).await
    }
}

/// Requests one completion and turns it into a scored [`RoundResponse`].
pub async fn complete_round(
    backend: &dyn Backend,
    verifier: &Verifier,
    request: &CompletionRequest<'_>,
) -> Result<RoundResponse, BackendError> {
    let completion = backend.complete(request).await?;
    Ok(score_completion(verifier, request.task, request.tag.round, request.prompt, completion).await)
}

/// Splits, extracts and verifies a completion.
pub async fn score_completion(
    verifier: &Verifier,
    task: &TaskSpec,
    round: u32,
    prompt: &str,
    completion: Completion,
) -> RoundResponse {
    let split = split_with_reasoning(&completion.content, completion.reasoning.as_deref());
    let raw = match &completion.reasoning {
        Some(r) => join_reasoning(r, &completion.content),
        None => completion.content,
    };
    let (completion_tokens, token_source) = match completion.completion_tokens {
        Some(n) => (n, TokenSource::ApiUsage),
        None => (raw.split_whitespace().count() as u64, TokenSource::WhitespaceFallback),
    };
    let extracted = extract_final_answer(&split.answer, task.answer_kind);
    let verdict = verifier.verify_task(task, extracted.as_deref()).await;
    RoundResponse {
        round,
        prompt_used: prompt.to_string(),
        raw,
        thinking: split.thinking,
        answer: split.answer,
        extracted,
        completion_tokens,
        token_source,
        verdict,
        truncated: completion.truncated,
    }
}
