//! Verified fine-tuning data: run the multi-round loop on a task until a
//! round verifies correct, and keep that round as a training example.
//!
//! Unlike evaluation, a chain here stops at the first correct round. The
//! stored prompt is the round's actual prompt, so examples from round 2 on
//! carry the previous (wrong) answer as corrective context.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backend::{complete_round, Backend, CompletionRequest, RoundTag};
use crate::domain::{Benchmark, SamplingParams, TaskSpec, Verdict};
use crate::error::{BackendError, Error, PromptError};
use crate::prompting::build_round_prompt;
use crate::verification::Verifier;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task_id: String,
    pub prompt: String,
    pub thinking: String,
    pub answer: String,
    pub rounds_used: u32,
}

#[derive(Debug, Clone)]
pub enum ExampleOutcome {
    Verified(SftRecord),
    /// No round verified within the budget.
    Exhausted,
    Failed { round: u32, error: BackendError },
}

impl ExampleOutcome {
    pub fn record(&self) -> Option<&SftRecord> {
        match self {
            ExampleOutcome::Verified(r) => Some(r),
            _ => None,
        }
    }
}

/// Runs one chain for up to `max_rounds`, stopping at the first correct round.
pub async fn generate_verified_example(
    task: &TaskSpec,
    params: &SamplingParams,
    backend: &dyn Backend,
    verifier: &Verifier,
    max_rounds: u32,
) -> Result<ExampleOutcome, PromptError> {
    let mut prev: Option<(String, bool)> = None;
    for round in 1..=max_rounds {
        let prompt = build_round_prompt(&task.prompt, prev.as_ref().map(|(a, _)| a.as_str()))?;
        let request = CompletionRequest {
            task,
            prompt: &prompt,
            params,
            tag: RoundTag { task_id: task.id.clone(), chain_index: 0, round },
            prev_correct: prev.as_ref().map(|(_, c)| *c),
        };
        let response = match complete_round(backend, verifier, &request).await {
            Ok(r) => r,
            Err(error) => return Ok(ExampleOutcome::Failed { round, error }),
        };
        if response.verdict == Verdict::Correct {
            return Ok(ExampleOutcome::Verified(SftRecord {
                task_id: task.id.clone(),
                prompt: response.prompt_used,
                thinking: response.thinking,
                answer: response.answer,
                rounds_used: round,
            }));
        }
        prev = Some((response.answer, false));
    }
    Ok(ExampleOutcome::Exhausted)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SftSummary {
    pub tasks: usize,
    pub emitted: usize,
    /// Records already present in the output file from an earlier invocation.
    pub reused: usize,
    pub exhausted: usize,
    pub failed: usize,
    pub by_rounds_used: BTreeMap<u32, usize>,
    pub yield_fraction: f64,
}

/// Generates examples for every task and streams them to `out` as JSON Lines
/// in dataset order.
///
/// Tasks that already have a record in `out` are skipped, so an interrupted
/// generation continues where it stopped.
pub async fn generate_dataset(
    tasks: &[TaskSpec],
    params_for: impl Fn(Benchmark) -> SamplingParams,
    backend: &dyn Backend,
    verifier: &Verifier,
    max_rounds: u32,
    concurrency: usize,
    out: &Path,
) -> Result<SftSummary, Error> {
    let io = |source| Error::Io { path: out.to_path_buf(), source };
    let mut summary = SftSummary { tasks: tasks.len(), ..SftSummary::default() };

    let mut done = HashSet::new();
    if out.exists() {
        let text = fs::read_to_string(out).map_err(io)?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<SftRecord>(line) {
                Ok(rec) => {
                    *summary.by_rounds_used.entry(rec.rounds_used).or_default() += 1;
                    done.insert(rec.task_id);
                }
                Err(e) => warn!(error = %e, "ignoring malformed line in existing output"),
            }
        }
    }
    summary.reused = done.len();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(out).map_err(io)?;

    let pending: Vec<(&TaskSpec, SamplingParams)> = tasks
        .iter()
        .filter(|t| !done.contains(&t.id))
        .map(|t| (t, params_for(t.benchmark)))
        .collect();
    let mut results = stream::iter(pending.iter())
        .map(|(task, params)| async move {
            (*task, generate_verified_example(task, params, backend, verifier, max_rounds).await)
        })
        .buffered(concurrency.max(1));

    while let Some((task, outcome)) = results.next().await {
        match outcome? {
            ExampleOutcome::Verified(rec) => {
                let mut line = serde_json::to_string(&rec).expect("record serializes");
                line.push('\n');
                file.write_all(line.as_bytes()).map_err(io)?;
                *summary.by_rounds_used.entry(rec.rounds_used).or_default() += 1;
                summary.emitted += 1;
            }
            ExampleOutcome::Exhausted => summary.exhausted += 1,
            ExampleOutcome::Failed { round, error } => {
                warn!(task = %task.id, round, %error, "no example: backend failure");
                summary.failed += 1;
            }
        }
    }
    file.flush().map_err(io)?;
    let total_records = summary.emitted + summary.reused;
    summary.yield_fraction = if tasks.is_empty() { 0.0 } else { total_records as f64 / tasks.len() as f64 };
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::domain::{AnswerKind, MockModelSpec};
    use crate::prompting::PREVIOUS_ANSWER_MARKER;

    fn task() -> TaskSpec {
        TaskSpec { id: "t".into(), benchmark: Benchmark::Aime24, prompt: "Q".into(), gold: "3".into(), answer_kind: AnswerKind::Integer }
    }

    async fn outcome(p1: f64, t_ic: f64, max_rounds: u32) -> ExampleOutcome {
        let backend = MockBackend::new(MockModelSpec::new(p1, 0.5, t_ic, 5).unwrap());
        let params = SamplingParams::for_benchmark(Benchmark::Aime24);
        generate_verified_example(&task(), &params, &backend, &Verifier::default(), max_rounds).await.unwrap()
    }

    #[tokio::test]
    async fn first_round_success() {
        let rec = outcome(1.0, 0.0, 4).await.record().cloned().unwrap();
        assert_eq!(rec.rounds_used, 1);
        assert_eq!(rec.prompt, "Q");
    }

    #[tokio::test]
    async fn forced_correction_keeps_context() {
        let rec = outcome(0.0, 1.0, 4).await.record().cloned().unwrap();
        assert_eq!(rec.rounds_used, 2);
        assert!(rec.prompt.contains(PREVIOUS_ANSWER_MARKER));
    }

    #[tokio::test]
    async fn never_verifies() {
        assert!(matches!(outcome(0.0, 0.0, 4).await, ExampleOutcome::Exhausted));
    }

    #[tokio::test]
    async fn empty_task_list() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sft.jsonl");
        let backend = MockBackend::new(MockModelSpec::new(0.5, 0.5, 0.5, 1).unwrap());
        let summary = generate_dataset(&[], SamplingParams::for_benchmark, &backend, &Verifier::default(), 3, 4, &out)
            .await
            .unwrap();
        assert_eq!(summary, SftSummary::default());
        assert_eq!(fs::read_to_string(&out).unwrap(), "");
    }
}
