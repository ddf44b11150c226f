//! Run configuration (TOML).
//!
//! ```toml
//! dataset = "tasks.jsonl"          # JSON Lines, one task per line
//! output_dir = "runs/demo"
//! concurrency = 8                  # chains / requests in flight
//!
//! [backend]
//! kind = "mock"                    # or "live"
//!
//! [backend.mock]
//! p1 = 0.6
//! t_cc = 0.95
//! t_ic = 0.3
//! seed = 0
//!
//! [backend.live]
//! base_url = "http://localhost:8000/v1"
//! model = "qwq-32b"
//! api_key_env = "OPENAI_API_KEY"
//! timeout_secs = 3600
//!
//! [sampling]                       # applies to every benchmark
//! n_rounds = 4
//!
//! [sampling.aime24]                # per-benchmark overrides
//! samples_per_task = 32
//!
//! [verifier]
//! hook = ["python3", "check_code.py"]
//! ```
//!
//! Omitted sampling values fall back to temperature 0.6, top-p 0.95,
//! 32768 max tokens and the benchmark's default sample count. Unknown keys
//! are rejected with a suggestion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use toml::Value;

use crate::backend::{Backend, BackendDescriptor, LiveClient, MockBackend, ReqwestTransport, DEFAULT_API_KEY_ENV};
use crate::domain::{load_dataset, Benchmark, MockModelSpec, SamplingParams, TaskSpec};
use crate::error::ConfigError;
use crate::store::Manifest;
use crate::verification::Verifier;

pub const DEFAULT_CONCURRENCY: usize = 8;
const DEFAULT_TIMEOUT_SECS: u64 = 3600;

const TOP_KEYS: &[&str] = &["dataset", "output_dir", "concurrency", "backend", "sampling", "verifier"];
const BACKEND_KEYS: &[&str] = &["kind", "mock", "live"];
const MOCK_KEYS: &[&str] = &["p1", "t_cc", "t_ic", "seed"];
const LIVE_KEYS: &[&str] = &["base_url", "model", "api_key_env", "timeout_secs"];
const SAMPLING_KEYS: &[&str] = &["temperature", "top_p", "max_tokens", "samples_per_task", "n_rounds"];
const VERIFIER_KEYS: &[&str] = &["hook"];

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingOverrides {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
    pub samples_per_task: Option<u32>,
    pub n_rounds: Option<u32>,
}

impl SamplingOverrides {
    fn apply(&self, p: &mut SamplingParams) {
        if let Some(v) = self.temperature {
            p.temperature = v;
        }
        if let Some(v) = self.top_p {
            p.top_p = v;
        }
        if let Some(v) = self.max_tokens {
            p.max_tokens = v;
        }
        if let Some(v) = self.samples_per_task {
            p.samples_per_task = v;
        }
        if let Some(v) = self.n_rounds {
            p.n_rounds = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub concurrency: usize,
    pub backend_kind: BackendKind,
    pub mock: MockModelSpec,
    pub live: Option<LiveConfig>,
    pub sampling: SamplingOverrides,
    pub per_benchmark: BTreeMap<Benchmark, SamplingOverrides>,
    pub verifier_hook: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            output_dir: None,
            concurrency: DEFAULT_CONCURRENCY,
            backend_kind: BackendKind::Mock,
            mock: default_mock_spec(),
            live: None,
            sampling: SamplingOverrides::default(),
            per_benchmark: BTreeMap::new(),
            verifier_hook: None,
        }
    }
}

pub fn default_mock_spec() -> MockModelSpec {
    MockModelSpec { p1: 0.6, t_ic: 0.3, t_cc: 0.95, seed: 0 }
}

fn suggest(key: &str, known: &[&str]) -> Option<String> {
    known
        .iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .filter(|(d, k)| *d <= 2.max(k.len() / 3))
        .min()
        .map(|(_, k)| k.to_string())
}

fn check_keys(table: &toml::Table, known: &[&str], prefix: &str) -> Result<(), ConfigError> {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key: format!("{prefix}{key}"), suggestion: suggest(key, known).map(|s| format!("{prefix}{s}")) });
        }
    }
    Ok(())
}

fn sub_table<'a>(table: &'a toml::Table, key: &str, path: &str) -> Result<Option<&'a toml::Table>, ConfigError> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(ConfigError::InvalidValue { key: path.to_string(), message: "expected a table".into() }),
    }
}

fn typed<T: for<'de> Deserialize<'de>>(table: &toml::Table, path: &str) -> Result<T, ConfigError> {
    Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| ConfigError::InvalidValue {
        key: path.to_string(),
        message: e.message().to_string(),
    })
}

/// Walks the raw document and rejects unknown keys before typed decoding.
fn check_schema(doc: &toml::Table) -> Result<(), ConfigError> {
    check_keys(doc, TOP_KEYS, "")?;
    if let Some(backend) = sub_table(doc, "backend", "backend")? {
        check_keys(backend, BACKEND_KEYS, "backend.")?;
        if let Some(mock) = sub_table(backend, "mock", "backend.mock")? {
            check_keys(mock, MOCK_KEYS, "backend.mock.")?;
        }
        if let Some(live) = sub_table(backend, "live", "backend.live")? {
            check_keys(live, LIVE_KEYS, "backend.live.")?;
        }
    }
    if let Some(sampling) = sub_table(doc, "sampling", "sampling")? {
        let benchmark_names: Vec<&str> = Benchmark::ALL.iter().map(|b| b.as_str()).collect();
        let all: Vec<&str> = SAMPLING_KEYS.iter().copied().chain(benchmark_names.iter().copied()).collect();
        check_keys(sampling, &all, "sampling.")?;
        for name in &benchmark_names {
            let path = format!("sampling.{name}");
            if let Some(t) = sub_table(sampling, name, &path)? {
                check_keys(t, SAMPLING_KEYS, &format!("{path}."))?;
            }
        }
    }
    if let Some(verifier) = sub_table(doc, "verifier", "verifier")? {
        check_keys(verifier, VERIFIER_KEYS, "verifier.")?;
    }
    Ok(())
}

fn get_typed<T: for<'de> Deserialize<'de>>(table: &toml::Table, key: &str, path: &str) -> Result<Option<T>, ConfigError> {
    table
        .get(key)
        .map(|v| {
            v.clone().try_into().map_err(|e: toml::de::Error| ConfigError::InvalidValue {
                key: path.to_string(),
                message: e.message().to_string(),
            })
        })
        .transpose()
}

/// Parses config text. Relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    check_schema(&doc)?;

    let mut cfg = RunConfig {
        dataset: get_typed::<PathBuf>(&doc, "dataset", "dataset")?.map(|p| base_dir.join(p)),
        output_dir: get_typed::<PathBuf>(&doc, "output_dir", "output_dir")?.map(|p| base_dir.join(p)),
        ..RunConfig::default()
    };
    if let Some(c) = get_typed::<i64>(&doc, "concurrency", "concurrency")? {
        if c < 1 {
            return Err(ConfigError::InvalidValue { key: "concurrency".into(), message: format!("{c} must be >= 1") });
        }
        cfg.concurrency = c as usize;
    }

    if let Some(backend) = sub_table(&doc, "backend", "backend")? {
        match get_typed::<String>(backend, "kind", "backend.kind")?.as_deref() {
            None | Some("mock") => cfg.backend_kind = BackendKind::Mock,
            Some("live") => cfg.backend_kind = BackendKind::Live,
            Some(other) => {
                return Err(ConfigError::InvalidValue {
                    key: "backend.kind".into(),
                    message: format!("{other:?} is not one of \"mock\", \"live\""),
                })
            }
        }
        if let Some(mock) = sub_table(backend, "mock", "backend.mock")? {
            let mut table = default_mock_table();
            table.extend(mock.clone());
            cfg.mock = typed(&table, "backend.mock")?;
        }
        if let Some(live) = sub_table(backend, "live", "backend.live")? {
            cfg.live = Some(typed(live, "backend.live")?);
        }
    }
    if let Some(sampling) = sub_table(&doc, "sampling", "sampling")? {
        let mut global = sampling.clone();
        global.retain(|k, _| SAMPLING_KEYS.contains(&k));
        cfg.sampling = typed(&global, "sampling")?;
        for b in Benchmark::ALL {
            let path = format!("sampling.{b}");
            if let Some(t) = sub_table(sampling, b.as_str(), &path)? {
                cfg.per_benchmark.insert(b, typed(t, &path)?);
            }
        }
    }
    if let Some(verifier) = sub_table(&doc, "verifier", "verifier")? {
        cfg.verifier_hook = get_typed::<Vec<String>>(verifier, "hook", "verifier.hook")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_mock_table() -> toml::Table {
    let d = default_mock_spec();
    let mut t = toml::Table::new();
    t.insert("p1".into(), Value::Float(d.p1));
    t.insert("t_cc".into(), Value::Float(d.t_cc));
    t.insert("t_ic".into(), Value::Float(d.t_ic));
    t.insert("seed".into(), Value::Integer(d.seed as i64));
    t
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}

impl RunConfig {
    /// Sampling parameters for one benchmark: defaults, then `[sampling]`,
    /// then `[sampling.<benchmark>]`.
    pub fn params_for(&self, benchmark: Benchmark) -> SamplingParams {
        let mut p = SamplingParams::for_benchmark(benchmark);
        self.sampling.apply(&mut p);
        if let Some(o) = self.per_benchmark.get(&benchmark) {
            o.apply(&mut p);
        }
        p
    }

    pub fn params_map(&self, tasks: &[TaskSpec]) -> BTreeMap<Benchmark, SamplingParams> {
        tasks.iter().map(|t| (t.benchmark, self.params_for(t.benchmark))).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.concurrency == 0 {
            return Err(ConfigError::InvalidValue { key: "concurrency".into(), message: "must be >= 1".into() });
        }
        for b in Benchmark::ALL {
            if let Err((field, message)) = self.params_for(b).check() {
                let key = if self.per_benchmark.get(&b).is_some_and(|o| overrides_field(o, field)) {
                    format!("sampling.{b}.{field}")
                } else {
                    format!("sampling.{field}")
                };
                return Err(ConfigError::InvalidValue { key, message });
            }
        }
        if let Err(e) = self.mock.validate() {
            return Err(ConfigError::InvalidValue { key: "backend.mock".into(), message: e.to_string() });
        }
        if self.backend_kind == BackendKind::Live {
            let live = self.live.as_ref().ok_or(ConfigError::MissingKey { key: "backend.live".into() })?;
            if live.base_url.is_empty() {
                return Err(ConfigError::InvalidValue { key: "backend.live.base_url".into(), message: "must not be empty".into() });
            }
            if std::env::var(&live.api_key_env).map_or(true, |v| v.is_empty()) {
                return Err(ConfigError::MissingCredential { key: "backend.live.api_key_env".into(), var: live.api_key_env.clone() });
            }
        }
        if self.verifier_hook.as_ref().is_some_and(|h| h.is_empty()) {
            return Err(ConfigError::InvalidValue { key: "verifier.hook".into(), message: "command must not be empty".into() });
        }
        Ok(())
    }

    /// Overrides every benchmark's round count.
    pub fn set_rounds(&mut self, n_rounds: u32) {
        self.sampling.n_rounds = Some(n_rounds);
        for o in self.per_benchmark.values_mut() {
            o.n_rounds = None;
        }
    }

    pub fn dataset_path(&self) -> Result<&Path, ConfigError> {
        self.dataset.as_deref().ok_or(ConfigError::MissingKey { key: "dataset".into() })
    }

    pub fn load_tasks(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        Ok(load_dataset(self.dataset_path()?)?)
    }

    pub fn descriptor(&self) -> Result<BackendDescriptor, ConfigError> {
        Ok(match self.backend_kind {
            BackendKind::Mock => BackendDescriptor::Mock { spec: self.mock.clone() },
            BackendKind::Live => {
                let live = self.live.as_ref().ok_or(ConfigError::MissingKey { key: "backend.live".into() })?;
                BackendDescriptor::Live {
                    base_url: live.base_url.trim_end_matches('/').to_string(),
                    model: live.model.clone(),
                }
            }
        })
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        match self.backend_kind {
            BackendKind::Mock => Ok(Arc::new(MockBackend::new(self.mock.clone()))),
            BackendKind::Live => {
                let live = self.live.as_ref().ok_or(ConfigError::MissingKey { key: "backend.live".into() })?;
                let key = std::env::var(&live.api_key_env)
                    .ok()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| ConfigError::MissingCredential { key: "backend.live.api_key_env".into(), var: live.api_key_env.clone() })?;
                let transport = ReqwestTransport::new(Duration::from_secs(live.timeout_secs)).map_err(|e| ConfigError::InvalidValue {
                    key: "backend.live".into(),
                    message: e.to_string(),
                })?;
                Ok(Arc::new(LiveClient::new(&live.base_url, &live.model, Some(key), Arc::new(transport), self.concurrency)))
            }
        }
    }

    pub fn verifier(&self) -> Verifier {
        Verifier::new(self.verifier_hook.clone(), self.concurrency)
    }

    pub fn manifest(&self, tasks: &[TaskSpec]) -> Result<Manifest, ConfigError> {
        Ok(Manifest::new(tasks, self.params_map(tasks), self.descriptor()?, self.verifier_hook.clone()))
    }
}

fn overrides_field(o: &SamplingOverrides, field: &str) -> bool {
    match field {
        "temperature" => o.temperature.is_some(),
        "top_p" => o.top_p.is_some(),
        "max_tokens" => o.max_tokens.is_some(),
        "samples_per_task" => o.samples_per_task.is_some(),
        "n_rounds" => o.n_rounds.is_some(),
        _ => false,
    }
}
