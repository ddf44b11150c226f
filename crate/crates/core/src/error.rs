use std::path::PathBuf;

use thiserror::Error;

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("user prompt must not be empty")]
    EmptyPrompt,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: invalid task JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("task {id:?}: {message}")]
    Invalid { id: String, message: String },
    #[error("duplicate task id {0:?}")]
    DuplicateId(String),
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Configuration problems. Every variant names the offending key.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{key}`{}", did_you_mean(.suggestion))]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("credential environment variable `{var}` (key `{key}`) is not set")]
    MissingCredential { key: String, var: String },
    #[error("cannot parse config: {0}")]
    Syntax(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run directory manifest does not match the current configuration: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn did_you_mean(suggestion: &Option<String>) -> String {
    match suggestion {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}

#[derive(Debug, Error, Clone)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Decode(String),
    #[error("backend gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<BackendError> },
    #[error("backend stopped: {0}")]
    Stopped(String),
}

impl BackendError {
    /// Transport failures, 429 and 5xx are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("corrupt manifest {path}: {message}")]
    CorruptManifest { path: PathBuf, message: String },
    #[error("{path} belongs to a different run: {diff}")]
    Incompatible { path: PathBuf, diff: String },
    #[error("store writer has shut down")]
    WriterClosed,
    #[error("duplicate record key {0}")]
    DuplicateKey(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty input")]
    Empty,
    #[error("chain {chain_index} of task {task_id:?} has no round {round}")]
    MissingRound { task_id: String, chain_index: u32, round: u32 },
    #[error("round pair ({a}, {b}) must satisfy 1 <= a < b")]
    BadRoundPair { a: u32, b: u32 },
}

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("round index must be >= 1")]
    ZeroRound,
    #[error("brute-force enumeration is limited to n <= {max}, got {n}")]
    TooManyRounds { n: u32, max: u32 },
    #[error("probability `{name}` = {value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
}
