//! Deterministic two-state Markov mock backend.
//!
//! Each round's correctness is drawn from a counter-based generator keyed by
//! `(seed, task_id, chain_index, round)`, so responses do not depend on
//! scheduling order, thread count or platform.

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{Backend, BackendDescriptor, Completion, CompletionRequest, RoundTag};
use crate::domain::{AnswerKind, Benchmark, MockModelSpec, TaskSpec};
use crate::error::BackendError;

pub const MOCK_MODEL_ID: &str = "mock-markov";

const CORRECTNESS_DRAW: u64 = 0;
const STYLE_DRAW: u64 = 1;

const SENTENCES: &[&str] = &[
    "Let me restate the problem carefully.",
    "But that assumes the cases are disjoint.",
    "Wait, I should double-check the arithmetic.",
    "Maybe there is a symmetry argument here.",
    "Therefore the count follows from the previous step.",
    "I will enumerate the small cases first.",
    "But wait, maybe the boundary case needs care.",
    "Therefore, combining both parts gives the total.",
];

/// Uniform value in `[0, 1)` for draw `counter` of the given cell.
fn uniform(seed: u64, tag: &RoundTag, counter: u64) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((tag.task_id.len() as u64).to_le_bytes());
    hasher.update(tag.task_id.as_bytes());
    hasher.update(tag.chain_index.to_le_bytes());
    hasher.update(tag.round.to_le_bytes());
    hasher.update(counter.to_le_bytes());
    let digest = hasher.finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Wrong-but-extractable answer derived from the gold label.
fn wrong_answer(task: &TaskSpec) -> String {
    match task.answer_kind {
        AnswerKind::Integer => {
            let gold: i64 = task.gold.trim().parse().unwrap_or(0);
            let wrong = gold + 1;
            if task.benchmark == Benchmark::Aime24 {
                wrong.rem_euclid(1000).to_string()
            } else {
                wrong.to_string()
            }
        }
        AnswerKind::Choice => match task.gold.trim() {
            "A" => "B",
            "B" => "C",
            "C" => "D",
            _ => "A",
        }
        .to_string(),
        AnswerKind::Expression => "{wrong}".to_string(),
        AnswerKind::Code => "raise NotImplementedError".to_string(),
    }
}

fn render_answer(task: &TaskSpec, value: &str) -> String {
    match task.answer_kind {
        AnswerKind::Integer | AnswerKind::Expression => format!("The final answer is \\boxed{{{value}}}."),
        AnswerKind::Choice => format!("The answer is ({value})."),
        AnswerKind::Code => format!("Here is the solution.\n```python\n{value}\n```"),
    }
}

/// Pure mock completion for one cell.
pub fn mock_complete(spec: &MockModelSpec, task: &TaskSpec, tag: &RoundTag, prev_correct: Option<bool>) -> Completion {
    let p = if tag.round <= 1 {
        spec.p1
    } else if prev_correct.unwrap_or(false) {
        spec.t_cc
    } else {
        spec.t_ic
    };
    let correct = uniform(spec.seed, tag, CORRECTNESS_DRAW) < p;

    let style = uniform(spec.seed, tag, STYLE_DRAW);
    let n_sentences = 3 + (style * 10.0) as usize;
    let offset = ((style * 1e6) as usize) % SENTENCES.len();
    let thinking: Vec<&str> = (0..n_sentences).map(|i| SENTENCES[(offset + i * 3) % SENTENCES.len()]).collect();

    let value = if correct { task.gold.trim().to_string() } else { wrong_answer(task) };
    let content = format!("<think>\n{}\n</think>\n\n{}", thinking.join("\n"), render_answer(task, &value));
    let tokens = content.split_whitespace().count() as u64;
    Completion { content, reasoning: None, completion_tokens: Some(tokens), truncated: false }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockModelSpec,
}

impl MockBackend {
    pub fn new(spec: MockModelSpec) -> Self {
        MockBackend { spec }
    }

    pub fn spec(&self) -> &MockModelSpec {
        &self.spec
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::Mock { spec: self.spec.clone() }
    }

    async fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        Ok(mock_complete(&self.spec, request.task, &request.tag, request.prev_correct))
    }
}
