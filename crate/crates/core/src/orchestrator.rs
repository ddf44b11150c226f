//! The multi-round loop over a dataset.
//!
//! Each task gets `samples_per_task` independent chains. Within a chain the
//! rounds run strictly in order: round `n + 1` is prompted with the original
//! question plus round `n`'s answer segment, and only after round `n` has been
//! extracted, verified and persisted. All rounds always run, even when an
//! early round is already correct.

use std::path::Path;

use futures::stream::{self, StreamExt};
use tracing::{info, warn};

use crate::backend::{complete_round, Backend, CompletionRequest, RoundTag};
use crate::domain::{Chain, SamplingParams, TaskSpec};
use crate::error::{BackendError, ConfigError, Error};
use crate::prompting::build_round_prompt;
use crate::store::{cache_key, CompletionRecord, FailureRecord, Manifest, RunStore, StoreWriter, QUARANTINE_DIR};
use crate::verification::Verifier;

/// A permanent backend failure that cut a chain short.
#[derive(Debug, Clone)]
pub struct ChainFailure {
    pub round: u32,
    pub error: BackendError,
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    /// Rounds completed so far; shorter than `n_rounds` when `failure` is set.
    pub chain: Chain,
    pub failure: Option<ChainFailure>,
}

/// Runs one chain without persistence.
pub async fn run_chain(
    task: &TaskSpec,
    params: &SamplingParams,
    chain_index: u32,
    backend: &dyn Backend,
    verifier: &Verifier,
) -> Result<ChainOutcome, Error> {
    let mut chain = Chain { task_id: task.id.clone(), benchmark: task.benchmark, chain_index, rounds: Vec::new() };
    for round in 1..=params.n_rounds {
        let prev = chain.rounds.last();
        let prompt = build_round_prompt(&task.prompt, prev.map(|r| r.answer.as_str()))?;
        let request = CompletionRequest {
            task,
            prompt: &prompt,
            params,
            tag: RoundTag { task_id: task.id.clone(), chain_index, round },
            prev_correct: prev.map(|r| r.verdict.is_correct()),
        };
        match complete_round(backend, verifier, &request).await {
            Ok(response) => chain.rounds.push(response),
            Err(error) => return Ok(ChainOutcome { chain, failure: Some(ChainFailure { round, error }) }),
        }
    }
    Ok(ChainOutcome { chain, failure: None })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    /// Completions requested from the backend in this invocation.
    pub requested: usize,
    /// Completions served from the store.
    pub cached: usize,
    /// Records moved to quarantine during this invocation.
    pub quarantined: usize,
    /// `(task_id, chain_index, failed_round)` for every truncated chain.
    pub truncated: Vec<(String, u32, u32)>,
}

impl RunSummary {
    pub fn is_success(&self) -> bool {
        self.truncated.is_empty()
    }
}

enum CellSource {
    Cached,
    Fresh(CompletionRecord),
    Replaced { stale: CompletionRecord, fresh: CompletionRecord, quarantined_to: std::path::PathBuf },
}

struct ChainRun {
    task_id: String,
    chain_index: u32,
    cells: Vec<CellSource>,
    failure: Option<(u32, BackendError)>,
}

async fn run_stored_chain(
    store: &RunStore,
    writer: &StoreWriter,
    task: &TaskSpec,
    params: &SamplingParams,
    chain_index: u32,
    backend: &dyn Backend,
    verifier: &Verifier,
) -> Result<ChainRun, Error> {
    let model_id = &store.manifest().model_id;
    let mut cells = Vec::with_capacity(params.n_rounds as usize);
    let mut prev: Option<CompletionRecord> = None;
    for round in 1..=params.n_rounds {
        let prompt = build_round_prompt(&task.prompt, prev.as_ref().map(|r| r.response.answer.as_str()))?;
        let key = cache_key(model_id, &prompt, params, chain_index, round);
        let parent_key = prev.as_ref().map(|r| r.key.clone());
        let existing = store.get(&task.id, chain_index, round);
        if let Some(rec) = existing {
            if rec.key == key && rec.parent_key == parent_key && rec.response.prompt_used == prompt {
                cells.push(CellSource::Cached);
                prev = Some(rec.clone());
                continue;
            }
        }
        let request = CompletionRequest {
            task,
            prompt: &prompt,
            params,
            tag: RoundTag { task_id: task.id.clone(), chain_index, round },
            prev_correct: prev.as_ref().map(|r| r.response.verdict.is_correct()),
        };
        let response = match complete_round(backend, verifier, &request).await {
            Ok(r) => r,
            Err(error) => {
                warn!(task = %task.id, chain_index, round, %error, "chain truncated");
                let failure = FailureRecord { task_id: task.id.clone(), chain_index, round, error: error.to_string() };
                writer.put_json(store.failure_path_for(&task.id, chain_index), &failure).await?;
                return Ok(ChainRun { task_id: task.id.clone(), chain_index, cells, failure: Some((round, error)) });
            }
        };
        let record = CompletionRecord { task_id: task.id.clone(), chain_index, key, parent_key, response };
        let path = store.record_path_for(&task.id, chain_index, round);
        if let Some(stale) = existing {
            let target = store
                .dir()
                .join(QUARANTINE_DIR)
                .join(format!("stale__{}", path.file_name().and_then(|n| n.to_str()).unwrap_or("record")));
            writer.rename(path.clone(), target.clone()).await?;
            writer.put_json(path, &record).await?;
            cells.push(CellSource::Replaced { stale: stale.clone(), fresh: record.clone(), quarantined_to: target });
        } else {
            writer.put_json(path, &record).await?;
            cells.push(CellSource::Fresh(record.clone()));
        }
        prev = Some(record);
    }
    writer.remove(store.failure_path_for(&task.id, chain_index)).await?;
    Ok(ChainRun { task_id: task.id.clone(), chain_index, cells, failure: None })
}

/// Runs (or continues) every chain of the store's dataset to completion.
///
/// Cells whose record is already persisted under the expected cache key are
/// not requested again, so re-running a complete store issues no requests.
/// At most `concurrency` chains are in flight.
pub async fn run_benchmark(
    store: &mut RunStore,
    backend: &dyn Backend,
    verifier: &Verifier,
    concurrency: usize,
) -> Result<RunSummary, Error> {
    let writer = StoreWriter::spawn();
    let jobs: Vec<(TaskSpec, SamplingParams, u32)> = store
        .tasks()
        .iter()
        .filter_map(|t| store.manifest().params_for(t.benchmark).map(|p| (t.clone(), p.clone())))
        .flat_map(|(t, p)| (0..p.samples_per_task).map(move |c| (t.clone(), p.clone(), c)))
        .collect();

    let results: Vec<Result<ChainRun, Error>> = {
        let shared: &RunStore = store;
        let writer = &writer;
        stream::iter(jobs.iter())
            .map(|(task, params, chain_index)| {
                run_stored_chain(shared, writer, task, params, *chain_index, backend, verifier)
            })
            .buffer_unordered(concurrency.max(1))
            .collect()
            .await
    };
    drop(writer);

    let mut summary = RunSummary::default();
    let mut first_error = None;
    for result in results {
        let run = match result {
            Ok(run) => run,
            Err(e) => {
                first_error.get_or_insert(e);
                continue;
            }
        };
        for cell in run.cells {
            match cell {
                CellSource::Cached => summary.cached += 1,
                CellSource::Fresh(rec) => {
                    summary.requested += 1;
                    store.insert(rec);
                }
                CellSource::Replaced { stale, fresh, quarantined_to } => {
                    summary.requested += 1;
                    summary.quarantined += 1;
                    store.remove(&stale.task_id, stale.chain_index, stale.response.round);
                    store.note_quarantined(quarantined_to);
                    store.insert(fresh);
                }
            }
        }
        if let Some((round, _)) = run.failure {
            summary.truncated.push((run.task_id.clone(), run.chain_index, round));
            drop_later_rounds(store, &run.task_id, run.chain_index, round);
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    summary.truncated.sort();
    info!(requested = summary.requested, cached = summary.cached, truncated = summary.truncated.len(), "run finished");
    Ok(summary)
}

/// Records after a failed round can no longer be trusted to follow the chain.
fn drop_later_rounds(store: &mut RunStore, task_id: &str, chain_index: u32, failed_round: u32) {
    let mut round = failed_round + 1;
    while store.remove(task_id, chain_index, round).is_some() {
        let path = store.record_path_for(task_id, chain_index, round);
        let _ = std::fs::remove_file(path);
        round += 1;
    }
}

/// Continues a run from its directory.
///
/// When `expected` is given (the manifest the current configuration would
/// produce), any difference in model, dataset, sampling parameters, backend or
/// verifier hook is refused. Unreadable records are quarantined and their
/// cells requested again.
pub async fn resume(
    run_dir: &Path,
    expected: Option<&Manifest>,
    backend: &dyn Backend,
    verifier: &Verifier,
    concurrency: usize,
) -> Result<(RunStore, RunSummary), Error> {
    let mut store = RunStore::open(run_dir)?;
    if let Some(expected) = expected {
        store.manifest().check_compatible(expected).map_err(ConfigError::ManifestMismatch)?;
    }
    if store.manifest().backend != backend.descriptor() {
        return Err(ConfigError::ManifestMismatch(format!(
            "backend {:?} != {:?}",
            store.manifest().backend,
            backend.descriptor()
        ))
        .into());
    }
    let loaded_quarantine = store.quarantined().len();
    let mut summary = run_benchmark(&mut store, backend, verifier, concurrency).await?;
    summary.quarantined += loaded_quarantine;
    Ok((store, summary))
}
