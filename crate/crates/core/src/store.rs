//! Resumable on-disk record of a benchmark run.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json
//! dataset.jsonl                                   canonical copy of the tasks
//! records/{benchmark}/{round}/{task}__c{chain}.jsonl   one CompletionRecord line
//! failures/{task}__c{chain}.json                  permanent failure of an unfinished chain
//! quarantine/                                     records that failed to load or validate
//! reports/                                        regenerable report bundle
//! ```
//!
//! Record files hold exactly one line so that the store content never depends
//! on completion order. All writes go through a single [`StoreWriter`] thread
//! and land via write-to-temp + rename.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;
use tracing::warn;

use crate::backend::BackendDescriptor;
use crate::domain::{dataset_hash, dataset_to_jsonl, parse_dataset, Benchmark, Chain, RoundResponse, SamplingParams, TaskSpec};
use crate::error::StoreError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const RECORDS_DIR: &str = "records";
pub const FAILURES_DIR: &str = "failures";
pub const QUARANTINE_DIR: &str = "quarantine";
pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub model_id: String,
    pub dataset_hash: String,
    /// Resolved sampling parameters per benchmark present in the dataset.
    pub params: BTreeMap<Benchmark, SamplingParams>,
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub verifier_hook: Option<Vec<String>>,
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(
        tasks: &[TaskSpec],
        params: BTreeMap<Benchmark, SamplingParams>,
        backend: BackendDescriptor,
        verifier_hook: Option<Vec<String>>,
    ) -> Self {
        let dataset_hash = dataset_hash(tasks);
        let model_id = backend.model_id().to_string();
        let identity = serde_json::to_string(&(&model_id, &dataset_hash, &params, &backend)).expect("serializable");
        let run_id = hex::encode(&Sha256::digest(identity.as_bytes())[..8]);
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Manifest { run_id, model_id, dataset_hash, params, backend, verifier_hook, created_unix }
    }

    /// Checks everything that affects record content; creation time is ignored.
    pub fn check_compatible(&self, other: &Manifest) -> Result<(), String> {
        let mut diffs = Vec::new();
        if self.model_id != other.model_id {
            diffs.push(format!("model id {:?} != {:?}", self.model_id, other.model_id));
        }
        if self.dataset_hash != other.dataset_hash {
            diffs.push("dataset content differs".to_string());
        }
        if self.params != other.params {
            for (b, p) in &self.params {
                match other.params.get(b) {
                    Some(q) if q != p => diffs.push(format!("{b} sampling params {p:?} != {q:?}")),
                    None => diffs.push(format!("{b} sampling params missing")),
                    _ => {}
                }
            }
            if other.params.keys().any(|b| !self.params.contains_key(b)) {
                diffs.push("benchmark set differs".to_string());
            }
        }
        if self.backend != other.backend {
            diffs.push(format!("backend {:?} != {:?}", self.backend, other.backend));
        }
        if self.verifier_hook != other.verifier_hook {
            diffs.push("verifier hook differs".to_string());
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(diffs.join("; "))
        }
    }

    pub fn params_for(&self, benchmark: Benchmark) -> Option<&SamplingParams> {
        self.params.get(&benchmark)
    }
}

/// Cache key of one completion: model, prompt content, sampling parameters,
/// chain index and round.
pub fn cache_key(model_id: &str, prompt_used: &str, params: &SamplingParams, chain_index: u32, round: u32) -> String {
    let prompt_hash = hex::encode(Sha256::digest(prompt_used.as_bytes()));
    let material = serde_json::json!({
        "model": model_id,
        "prompt_sha256": prompt_hash,
        "params": params,
        "chain_index": chain_index,
        "round": round,
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

/// One persisted completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub task_id: String,
    pub chain_index: u32,
    pub key: String,
    /// Key of the same chain's previous round; orders records causally.
    pub parent_key: Option<String>,
    #[serde(flatten)]
    pub response: RoundResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub task_id: String,
    pub chain_index: u32,
    pub round: u32,
    pub error: String,
}

pub type CellId = (String, u32, u32);

/// File-system-safe stem for a task id. Ids that need escaping get a short
/// hash suffix so distinct ids never collide.
fn safe_stem(task_id: &str) -> String {
    let cleaned: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if cleaned == task_id && !task_id.starts_with('.') {
        cleaned
    } else {
        format!("{cleaned}-{}", &hex::encode(Sha256::digest(task_id.as_bytes()))[..8])
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    manifest: Manifest,
    tasks: Vec<TaskSpec>,
    records: HashMap<CellId, CompletionRecord>,
    quarantined: Vec<PathBuf>,
}

impl RunStore {
    /// Initializes a run directory, or reopens it when an existing manifest
    /// matches `manifest`. A mismatching manifest is refused.
    pub fn create(dir: &Path, manifest: Manifest, tasks: Vec<TaskSpec>) -> Result<Self, StoreError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let store = RunStore::open(dir)?;
            if let Err(diff) = store.manifest.check_compatible(&manifest) {
                return Err(StoreError::Incompatible { path: manifest_path, diff });
            }
            return Ok(store);
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_atomic(&dir.join(DATASET_FILE), dataset_to_jsonl(&tasks).as_bytes())?;
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&manifest_path, json.as_bytes())?;
        Ok(RunStore { dir: dir.to_path_buf(), manifest, tasks, records: HashMap::new(), quarantined: Vec::new() })
    }

    /// Loads a run directory. Record files that fail to parse are moved to
    /// `quarantine/` so that their cells are requested again.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(StoreError::MissingManifest(dir.to_path_buf()));
        }
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| StoreError::CorruptManifest { path: manifest_path.clone(), message: e.to_string() })?;
        let dataset_path = dir.join(DATASET_FILE);
        let dataset_text = fs::read_to_string(&dataset_path).map_err(io_err(&dataset_path))?;
        let tasks = parse_dataset(&dataset_text)
            .map_err(|e| StoreError::CorruptManifest { path: dataset_path.clone(), message: e.to_string() })?;
        if dataset_hash(&tasks) != manifest.dataset_hash {
            return Err(StoreError::CorruptManifest {
                path: dataset_path,
                message: "dataset hash does not match manifest".into(),
            });
        }
        let mut store = RunStore { dir: dir.to_path_buf(), manifest, tasks, records: HashMap::new(), quarantined: Vec::new() };
        store.load_records()?;
        Ok(store)
    }

    fn load_records(&mut self) -> Result<(), StoreError> {
        let root = self.dir.join(RECORDS_DIR);
        if !root.exists() {
            return Ok(());
        }
        let mut files = Vec::new();
        collect_files(&root, &mut files)?;
        files.sort();
        for path in files {
            if path.extension().and_then(|e| e.to_str()) == Some("tmp") {
                let _ = fs::remove_file(&path);
                continue;
            }
            let parsed = fs::read_to_string(&path)
                .ok()
                .and_then(|text| serde_json::from_str::<CompletionRecord>(text.trim_end()).ok())
                .filter(|r| path == self.record_path_for(&r.task_id, r.chain_index, r.response.round));
            match parsed {
                Some(record) => {
                    let id = (record.task_id.clone(), record.chain_index, record.response.round);
                    self.records.insert(id, record);
                }
                None => {
                    warn!(path = %path.display(), "quarantining unreadable record");
                    self.quarantine_file(&path)?;
                }
            }
        }
        Ok(())
    }

    fn quarantine_file(&mut self, path: &Path) -> Result<(), StoreError> {
        let qdir = self.dir.join(QUARANTINE_DIR);
        fs::create_dir_all(&qdir).map_err(io_err(&qdir))?;
        let rel = path.strip_prefix(&self.dir).unwrap_or(path);
        let name = rel.to_string_lossy().replace(['/', '\\'], "__");
        let target = qdir.join(name);
        fs::rename(path, &target).map_err(io_err(path))?;
        self.quarantined.push(target);
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn quarantined(&self) -> &[PathBuf] {
        &self.quarantined
    }

    pub fn records(&self) -> impl Iterator<Item = &CompletionRecord> {
        self.records.values()
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn get(&self, task_id: &str, chain_index: u32, round: u32) -> Option<&CompletionRecord> {
        self.records.get(&(task_id.to_string(), chain_index, round))
    }

    fn task_benchmark(&self, task_id: &str) -> Benchmark {
        self.tasks.iter().find(|t| t.id == task_id).map_or(Benchmark::Custom, |t| t.benchmark)
    }

    pub fn record_path_for(&self, task_id: &str, chain_index: u32, round: u32) -> PathBuf {
        self.dir
            .join(RECORDS_DIR)
            .join(self.task_benchmark(task_id).as_str())
            .join(round.to_string())
            .join(format!("{}__c{chain_index:04}.jsonl", safe_stem(task_id)))
    }

    pub fn failure_path_for(&self, task_id: &str, chain_index: u32) -> PathBuf {
        self.dir.join(FAILURES_DIR).join(format!("{}__c{chain_index:04}.json", safe_stem(task_id)))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join(REPORTS_DIR)
    }

    pub(crate) fn insert(&mut self, record: CompletionRecord) {
        let id = (record.task_id.clone(), record.chain_index, record.response.round);
        self.records.insert(id, record);
    }

    pub(crate) fn remove(&mut self, task_id: &str, chain_index: u32, round: u32) -> Option<CompletionRecord> {
        self.records.remove(&(task_id.to_string(), chain_index, round))
    }

    pub(crate) fn note_quarantined(&mut self, path: PathBuf) {
        self.quarantined.push(path);
    }

    /// `sum over tasks of samples_per_task * n_rounds`.
    pub fn expected_record_count(&self) -> usize {
        self.tasks
            .iter()
            .filter_map(|t| self.manifest.params_for(t.benchmark))
            .map(|p| p.samples_per_task as usize * p.n_rounds as usize)
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.record_count() == self.expected_record_count()
    }

    /// Chains assembled from contiguous records, in dataset order. Chains
    /// without a round-1 record are omitted.
    pub fn chains(&self) -> Vec<Chain> {
        let mut chains = Vec::new();
        for task in &self.tasks {
            let Some(params) = self.manifest.params_for(task.benchmark) else { continue };
            for chain_index in 0..params.samples_per_task {
                let rounds: Vec<RoundResponse> = (1..=params.n_rounds)
                    .map_while(|r| self.get(&task.id, chain_index, r).map(|rec| rec.response.clone()))
                    .collect();
                if !rounds.is_empty() {
                    chains.push(Chain { task_id: task.id.clone(), benchmark: task.benchmark, chain_index, rounds });
                }
            }
        }
        chains
    }

    /// Persisted failures of chains that have not completed yet.
    pub fn failures(&self) -> Result<Vec<FailureRecord>, StoreError> {
        let dir = self.dir.join(FAILURES_DIR);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut files = Vec::new();
        collect_files(&dir, &mut files)?;
        files.sort();
        Ok(files
            .iter()
            .filter_map(|p| fs::read_to_string(p).ok())
            .filter_map(|t| serde_json::from_str(&t).ok())
            .collect())
    }

    /// Mechanical integrity checks over every persisted record: unique keys,
    /// contiguous chains, prompt derivation, and key/content agreement.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut keys = HashSet::new();
        for record in self.records.values() {
            if !keys.insert(record.key.as_str()) {
                problems.push(format!("duplicate key {}", record.key));
            }
        }
        let tasks: HashMap<&str, &TaskSpec> = self.tasks.iter().map(|t| (t.id.as_str(), t)).collect();
        for chain in self.chains() {
            let Some(task) = tasks.get(chain.task_id.as_str()) else { continue };
            let params = &self.manifest.params[&task.benchmark];
            if !chain.is_contiguous() {
                problems.push(format!("chain {}#{} is not contiguous", chain.task_id, chain.chain_index));
            }
            if !chain.prompts_derive_from(&task.prompt) {
                problems.push(format!("chain {}#{} has an underivable prompt", chain.task_id, chain.chain_index));
            }
            let mut parent: Option<&str> = None;
            for r in &chain.rounds {
                let rec = &self.records[&(chain.task_id.clone(), chain.chain_index, r.round)];
                let expected = cache_key(&self.manifest.model_id, &r.prompt_used, params, chain.chain_index, r.round);
                if rec.key != expected {
                    problems.push(format!("record {}#{} round {} has a stale key", chain.task_id, chain.chain_index, r.round));
                }
                if rec.parent_key.as_deref() != parent {
                    problems.push(format!("record {}#{} round {} has a broken parent link", chain.task_id, chain.chain_index, r.round));
                }
                parent = Some(&rec.key);
            }
        }
        problems
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), StoreError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

enum WriteOp {
    Put { path: PathBuf, bytes: Vec<u8>, ack: oneshot::Sender<Result<(), StoreError>> },
    Remove { path: PathBuf, ack: oneshot::Sender<Result<(), StoreError>> },
    Move { from: PathBuf, to: PathBuf, ack: oneshot::Sender<Result<(), StoreError>> },
}

/// The single serialized writer for a run directory.
pub struct StoreWriter {
    tx: Option<mpsc::Sender<WriteOp>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl StoreWriter {
    pub fn spawn() -> Self {
        let (tx, rx) = mpsc::channel::<WriteOp>();
        let handle = thread::Builder::new()
            .name("store-writer".into())
            .spawn(move || {
                for op in rx {
                    match op {
                        WriteOp::Put { path, bytes, ack } => {
                            let _ = ack.send(write_atomic(&path, &bytes));
                        }
                        WriteOp::Remove { path, ack } => {
                            let result = match fs::remove_file(&path) {
                                Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                                    Err(StoreError::Io { path: path.clone(), source: e })
                                }
                                _ => Ok(()),
                            };
                            let _ = ack.send(result);
                        }
                        WriteOp::Move { from, to, ack } => {
                            let result = to
                                .parent()
                                .map_or(Ok(()), |p| fs::create_dir_all(p).map_err(io_err(p)))
                                .and_then(|_| fs::rename(&from, &to).map_err(io_err(&from)));
                            let _ = ack.send(result);
                        }
                    }
                }
            })
            .expect("spawn store writer");
        StoreWriter { tx: Some(tx), handle: Some(handle) }
    }

    async fn submit(&self, make: impl FnOnce(oneshot::Sender<Result<(), StoreError>>) -> WriteOp) -> Result<(), StoreError> {
        let (ack, done) = oneshot::channel();
        self.tx.as_ref().ok_or(StoreError::WriterClosed)?.send(make(ack)).map_err(|_| StoreError::WriterClosed)?;
        done.await.map_err(|_| StoreError::WriterClosed)?
    }

    pub async fn put_json<T: Serialize>(&self, path: PathBuf, value: &T) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec(value).expect("record serializes");
        bytes.push(b'\n');
        self.submit(|ack| WriteOp::Put { path, bytes, ack }).await
    }

    pub async fn remove(&self, path: PathBuf) -> Result<(), StoreError> {
        self.submit(|ack| WriteOp::Remove { path, ack }).await
    }

    pub async fn rename(&self, from: PathBuf, to: PathBuf) -> Result<(), StoreError> {
        self.submit(|ack| WriteOp::Move { from, to, ack }).await
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AnswerKind, MockModelSpec};

    #[test]
    fn safe_stems_are_distinct() {
        assert_eq!(safe_stem("aime-2024_01"), "aime-2024_01");
        let a = safe_stem("a/b");
        let b = safe_stem("a_b");
        assert_ne!(a, b);
        assert!(!a.contains('/'));
        assert_ne!(safe_stem(".."), "..");
    }

    #[test]
    fn cache_key_depends_on_every_component() {
        let p = SamplingParams::for_benchmark(Benchmark::Aime24);
        let base = cache_key("m", "prompt", &p, 0, 1);
        assert_ne!(base, cache_key("m2", "prompt", &p, 0, 1));
        assert_ne!(base, cache_key("m", "prompt!", &p, 0, 1));
        assert_ne!(base, cache_key("m", "prompt", &SamplingParams { temperature: 0.7, ..p.clone() }, 0, 1));
        assert_ne!(base, cache_key("m", "prompt", &p, 1, 1));
        assert_ne!(base, cache_key("m", "prompt", &p, 0, 2));
        assert_eq!(base, cache_key("m", "prompt", &p, 0, 1));
    }

    #[test]
    fn manifest_mismatch_is_reported() {
        let tasks = vec![TaskSpec {
            id: "t".into(),
            benchmark: Benchmark::Aime24,
            prompt: "Q".into(),
            gold: "1".into(),
            answer_kind: AnswerKind::Integer,
        }];
        let backend = BackendDescriptor::Mock { spec: MockModelSpec::new(0.5, 0.5, 0.5, 1).unwrap() };
        let params: BTreeMap<_, _> = [(Benchmark::Aime24, SamplingParams::for_benchmark(Benchmark::Aime24))].into();
        let a = Manifest::new(&tasks, params.clone(), backend.clone(), None);
        let mut changed = params;
        changed.get_mut(&Benchmark::Aime24).unwrap().temperature = 0.7;
        let b = Manifest::new(&tasks, changed, backend, None);
        assert!(a.check_compatible(&a.clone()).is_ok());
        let err = a.check_compatible(&b).unwrap_err();
        assert!(err.contains("aime24"), "{err}");
    }
}
