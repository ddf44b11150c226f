#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rethink_core::backend::{Backend, BackendDescriptor, Completion, CompletionRequest, HttpResponse, HttpTransport, MockBackend};
use rethink_core::domain::{AnswerKind, Benchmark, MockModelSpec, SamplingParams, TaskSpec};
use rethink_core::error::BackendError;
use rethink_core::store::{Manifest, RunStore};

pub fn integer_tasks(n: usize) -> Vec<TaskSpec> {
    (0..n)
        .map(|i| TaskSpec {
            id: format!("t{i:04}"),
            benchmark: Benchmark::Aime24,
            prompt: format!("Problem {i}: find the remainder."),
            gold: ((i * 37) % 1000).to_string(),
            answer_kind: AnswerKind::Integer,
        })
        .collect()
}

/// A few tasks from each answer kind the mock can verify offline.
pub fn mixed_tasks() -> Vec<TaskSpec> {
    let mut tasks = integer_tasks(3);
    tasks.push(TaskSpec {
        id: "m0".into(),
        benchmark: Benchmark::Math500,
        prompt: "Simplify 3/4.".into(),
        gold: "\\frac{3}{4}".into(),
        answer_kind: AnswerKind::Expression,
    });
    tasks.push(TaskSpec {
        id: "m1".into(),
        benchmark: Benchmark::Math500,
        prompt: "Compute sqrt 2 squared.".into(),
        gold: "2".into(),
        answer_kind: AnswerKind::Expression,
    });
    for (i, gold) in ["A", "C", "D"].iter().enumerate() {
        tasks.push(TaskSpec {
            id: format!("g{i}"),
            benchmark: Benchmark::GpqaDiamond,
            prompt: format!("Question {i}. (A) one (B) two (C) three (D) four"),
            gold: gold.to_string(),
            answer_kind: AnswerKind::Choice,
        });
    }
    tasks
}

pub fn params(samples_per_task: u32, n_rounds: u32) -> SamplingParams {
    SamplingParams { samples_per_task, n_rounds, ..SamplingParams::for_benchmark(Benchmark::Aime24) }
}

pub fn params_map(tasks: &[TaskSpec], p: &SamplingParams) -> BTreeMap<Benchmark, SamplingParams> {
    tasks.iter().map(|t| (t.benchmark, p.clone())).collect()
}

pub fn mock_manifest(tasks: &[TaskSpec], spec: &MockModelSpec, p: &SamplingParams) -> Manifest {
    Manifest::new(tasks, params_map(tasks, p), BackendDescriptor::Mock { spec: spec.clone() }, None)
}

pub fn create_store(dir: &Path, tasks: &[TaskSpec], spec: &MockModelSpec, p: &SamplingParams) -> RunStore {
    RunStore::create(dir, mock_manifest(tasks, spec, p), tasks.to_vec()).expect("create store")
}

/// Mock backend that counts requests and, optionally, fails every request
/// after the first `limit`.
pub struct CountingBackend {
    inner: MockBackend,
    calls: AtomicUsize,
    limit: Option<usize>,
}

impl CountingBackend {
    pub fn new(spec: MockModelSpec) -> Self {
        CountingBackend { inner: MockBackend::new(spec), calls: AtomicUsize::new(0), limit: None }
    }

    pub fn fail_after(spec: MockModelSpec, limit: usize) -> Self {
        CountingBackend { inner: MockBackend::new(spec), calls: AtomicUsize::new(0), limit: Some(limit) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Backend for CountingBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    async fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.limit.is_some_and(|limit| n >= limit) {
            return Err(BackendError::Stopped("simulated interruption".into()));
        }
        self.inner.complete(request).await
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Scripted OpenAI-compatible server: the first `fail_first` attempts of each
/// distinct request body answer 429, later ones succeed after `latency`.
/// Chains of the same task send identical bodies, so they share that budget.
pub struct FakeServer {
    pub fail_first: usize,
    pub latency: Duration,
    in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub calls: AtomicUsize,
    pub rate_limited: AtomicUsize,
    pub succeeded: AtomicUsize,
    attempts: Mutex<HashMap<String, Vec<Instant>>>,
}

impl FakeServer {
    pub fn new(fail_first: usize, latency: Duration) -> Self {
        FakeServer {
            fail_first,
            latency,
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            rate_limited: AtomicUsize::new(0),
            succeeded: AtomicUsize::new(0),
            attempts: Mutex::new(HashMap::new()),
        }
    }

    /// Attempt timestamps per request body.
    pub fn attempt_times(&self) -> Vec<Vec<Instant>> {
        self.attempts.lock().unwrap().values().cloned().collect()
    }
}

#[async_trait]
impl HttpTransport for FakeServer {
    async fn post_json(&self, _url: &str, _bearer: Option<&str>, body: &serde_json::Value) -> Result<HttpResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let seen = {
            let mut attempts = self.attempts.lock().unwrap();
            let list = attempts.entry(body.to_string()).or_default();
            list.push(Instant::now());
            list.len()
        };
        tokio::time::sleep(self.latency).await;
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if seen <= self.fail_first {
            self.rate_limited.fetch_add(1, Ordering::SeqCst);
            return Ok(HttpResponse { status: 429, body: "{\"error\":\"rate limited\"}".into() });
        }
        self.succeeded.fetch_add(1, Ordering::SeqCst);
        let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
        let reply = serde_json::json!({
            "choices": [{
                "message": {
                    "role": "assistant",
                    "content": format!("Checked {} characters. The final answer is \\boxed{{0}}.", prompt.len()),
                    "reasoning_content": "Maybe zero. But wait, check again. Therefore zero."
                },
                "finish_reason": "stop"
            }],
            "usage": {"completion_tokens": 17}
        });
        Ok(HttpResponse { status: 200, body: reply.to_string() })
    }
}
