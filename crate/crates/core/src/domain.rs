//! Shared vocabulary: tasks, sampling parameters, per-round responses and chains.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DatasetError, SimulatorError};
use crate::prompting::build_round_prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "aime24")]
    Aime24,
    #[serde(rename = "math500")]
    Math500,
    #[serde(rename = "gpqa_diamond")]
    GpqaDiamond,
    #[serde(rename = "livecodebench")]
    LiveCodeBench,
    #[serde(rename = "custom")]
    Custom,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Aime24,
        Benchmark::Math500,
        Benchmark::GpqaDiamond,
        Benchmark::LiveCodeBench,
        Benchmark::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Aime24 => "aime24",
            Benchmark::Math500 => "math500",
            Benchmark::GpqaDiamond => "gpqa_diamond",
            Benchmark::LiveCodeBench => "livecodebench",
            Benchmark::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Benchmark> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }

    /// Samples drawn per question when estimating pass@1.
    pub fn default_samples_per_task(self) -> u32 {
        match self {
            Benchmark::Aime24 => 32,
            Benchmark::GpqaDiamond | Benchmark::LiveCodeBench => 8,
            Benchmark::Math500 => 4,
            Benchmark::Custom => 1,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Integer,
    Expression,
    Choice,
    Code,
}

impl AnswerKind {
    pub fn parse(s: &str) -> Option<AnswerKind> {
        match s {
            "integer" => Some(AnswerKind::Integer),
            "expression" => Some(AnswerKind::Expression),
            "choice" => Some(AnswerKind::Choice),
            "code" => Some(AnswerKind::Code),
            _ => None,
        }
    }
}

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub benchmark: Benchmark,
    /// The original user prompt. Every round's prompt starts with it.
    pub prompt: String,
    pub gold: String,
    pub answer_kind: AnswerKind,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |message: String| DatasetError::Invalid { id: self.id.clone(), message };
        if self.id.is_empty() {
            return Err(invalid("id must not be empty".into()));
        }
        if self.prompt.is_empty() {
            return Err(invalid("prompt must not be empty".into()));
        }
        match self.answer_kind {
            AnswerKind::Integer => {
                let value: i64 = self
                    .gold
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("gold {:?} is not an integer", self.gold)))?;
                if self.benchmark == Benchmark::Aime24 && !(0..=999).contains(&value) {
                    return Err(invalid(format!("aime24 gold {value} outside [0, 999]")));
                }
            }
            AnswerKind::Choice => {
                if !matches!(self.gold.trim(), "A" | "B" | "C" | "D") {
                    return Err(invalid(format!("choice gold {:?} is not one of A-D", self.gold)));
                }
            }
            AnswerKind::Expression | AnswerKind::Code => {}
        }
        Ok(())
    }
}

/// Parses JSON-Lines task input and checks every task invariant.
pub fn parse_dataset(text: &str) -> Result<Vec<TaskSpec>, DatasetError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskSpec = serde_json::from_str(line)
            .map_err(|e| DatasetError::Parse { line: idx + 1, message: e.to_string() })?;
        task.validate()?;
        if !seen.insert(task.id.clone()) {
            return Err(DatasetError::DuplicateId(task.id));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_dataset(path: &Path) -> Result<Vec<TaskSpec>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&text)
}

/// Canonical JSON-Lines rendering of a task list.
pub fn dataset_to_jsonl(tasks: &[TaskSpec]) -> String {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    out
}

/// SHA-256 over the canonical serialization of the dataset.
pub fn dataset_hash(tasks: &[TaskSpec]) -> String {
    hex::encode(Sha256::digest(dataset_to_jsonl(tasks).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub samples_per_task: u32,
    pub n_rounds: u32,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_MAX_TOKENS: u32 = 32_768;
pub const DEFAULT_ROUNDS: u32 = 2;

impl SamplingParams {
    pub fn for_benchmark(benchmark: Benchmark) -> Self {
        SamplingParams {
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: DEFAULT_MAX_TOKENS,
            samples_per_task: benchmark.default_samples_per_task(),
            n_rounds: DEFAULT_ROUNDS,
        }
    }

    /// Returns the name of the first out-of-range field and why.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(("temperature", format!("{} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(("top_p", format!("{} must be in (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(("max_tokens", "must be positive".into()));
        }
        if self.samples_per_task == 0 {
            return Err(("samples_per_task", "must be positive".into()));
        }
        if self.n_rounds == 0 {
            return Err(("n_rounds", "must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    ApiUsage,
    WhitespaceFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Unverifiable,
}

impl Verdict {
    /// Unverifiable scores as incorrect everywhere.
    pub fn is_correct(self) -> bool {
        self == Verdict::Correct
    }
}

/// One model completion in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundResponse {
    pub round: u32,
    pub prompt_used: String,
    pub raw: String,
    pub thinking: String,
    pub answer: String,
    pub extracted: Option<String>,
    pub completion_tokens: u64,
    pub token_source: TokenSource,
    pub verdict: Verdict,
    /// Generation stopped at `max_tokens`.
    #[serde(default)]
    pub truncated: bool,
}

/// One sampled trajectory of a task through rounds `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub task_id: String,
    pub benchmark: Benchmark,
    pub chain_index: u32,
    pub rounds: Vec<RoundResponse>,
}

impl Chain {
    pub fn round(&self, round: u32) -> Option<&RoundResponse> {
        let idx = usize::try_from(round).ok()?.checked_sub(1)?;
        self.rounds.get(idx)
    }

    pub fn verdict_at(&self, round: u32) -> Option<Verdict> {
        self.round(round).map(|r| r.verdict)
    }

    /// `rounds[i].round == i + 1` for all `i`.
    pub fn is_contiguous(&self) -> bool {
        self.rounds.iter().enumerate().all(|(i, r)| r.round as usize == i + 1)
    }

    /// Every round's prompt is derivable from the task prompt and the
    /// previous round's answer segment.
    pub fn prompts_derive_from(&self, user_prompt: &str) -> bool {
        let mut prev: Option<&str> = None;
        for r in &self.rounds {
            match build_round_prompt(user_prompt, prev) {
                Ok(expected) if expected == r.prompt_used => {}
                _ => return false,
            }
            prev = Some(&r.answer);
        }
        true
    }
}

/// Correctness transition of one chain between two rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrajectoryLabel {
    #[serde(rename = "I-C")]
    IC,
    #[serde(rename = "I-I")]
    II,
    #[serde(rename = "C-C")]
    CC,
    #[serde(rename = "C-I")]
    CI,
}

impl TrajectoryLabel {
    pub const ALL: [TrajectoryLabel; 4] =
        [TrajectoryLabel::IC, TrajectoryLabel::II, TrajectoryLabel::CC, TrajectoryLabel::CI];

    pub fn from_verdicts(a: Verdict, b: Verdict) -> Self {
        match (a.is_correct(), b.is_correct()) {
            (false, true) => TrajectoryLabel::IC,
            (false, false) => TrajectoryLabel::II,
            (true, true) => TrajectoryLabel::CC,
            (true, false) => TrajectoryLabel::CI,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryLabel::IC => "I-C",
            TrajectoryLabel::II => "I-I",
            TrajectoryLabel::CC => "C-C",
            TrajectoryLabel::CI => "C-I",
        }
    }
}

impl fmt::Display for TrajectoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of the two-state Markov mock model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockModelSpec {
    /// Probability that round 1 is correct.
    pub p1: f64,
    /// P(correct at n+1 | incorrect at n).
    pub t_ic: f64,
    /// P(correct at n+1 | correct at n).
    pub t_cc: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MockModelSpec {
    pub fn new(p1: f64, t_cc: f64, t_ic: f64, seed: u64) -> Result<Self, SimulatorError> {
        let spec = MockModelSpec { p1, t_ic, t_cc, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        for (name, value) in [("p1", self.p1), ("t_ic", self.t_ic), ("t_cc", self.t_cc)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimulatorError::BadProbability { name, value });
            }
        }
        Ok(())
    }
}
