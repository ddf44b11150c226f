use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rethink_core::backend::{Backend, BackendDescriptor, MockBackend};
use rethink_core::config::{load_config, BackendKind, RunConfig};
use rethink_core::domain::{AnswerKind, Benchmark, TaskSpec};
use rethink_core::error::{ConfigError, Error, StoreError};
use rethink_core::extraction::extract_final_answer;
use rethink_core::orchestrator::{resume, run_benchmark, RunSummary};
use rethink_core::report::{render_report, write_report};
use rethink_core::sft::generate_dataset;
use rethink_core::simulator::MarkovModel;
use rethink_core::store::RunStore;
use rethink_core::verification::Verifier;
use rethink_core::{BigRational, Scalar};

const EXIT_TRUNCATED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "rethink", version, about = "Multi-round thinking runs, reports and data generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Rounds per chain for every benchmark.
    #[arg(long, global = true)]
    rounds: Option<u32>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendChoice>,
    /// Chains (and live requests) in flight.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Mock backend seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Live,
    Mock,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run (or continue a compatible one) and write the report.
    Run,
    /// Continue an interrupted run.
    Resume,
    /// Regenerate reports/ from the records and print the markdown.
    Report,
    /// Print trajectory, keyword and length analysis as JSON.
    Analyze,
    /// Project accuracy over rounds with the two-state model.
    Simulate {
        #[arg(long, default_value_t = 0.6)]
        p1: f64,
        #[arg(long, default_value_t = 0.95)]
        t_cc: f64,
        #[arg(long, default_value_t = 0.3)]
        t_ic: f64,
        /// Show exact fractions next to the decimal values.
        #[arg(long)]
        exact: bool,
    },
    /// Generate verified fine-tuning examples as JSON Lines.
    SftGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_rounds: u32,
    },
    /// Check one answer against a gold value.
    Verify {
        /// Already-extracted final answer.
        #[arg(long, conflicts_with = "answer")]
        extracted: Option<String>,
        /// Full answer text; the final answer is extracted first.
        #[arg(long)]
        answer: Option<String>,
        #[arg(long)]
        gold: String,
        #[arg(long, default_value = "expression")]
        kind: String,
        #[arg(long, default_value = "custom")]
        benchmark: String,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(dispatch(cli)) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let is_config = err.downcast_ref::<ConfigError>().is_some()
                || matches!(err.downcast_ref::<Error>(), Some(Error::Config(_)));
            ExitCode::from(if is_config { EXIT_CONFIG } else { EXIT_TRUNCATED })
        }
    }
}

async fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let common = cli.common;
    match cli.command {
        Command::Run => cmd_run(&common).await,
        Command::Resume => cmd_resume(&common).await,
        Command::Report => {
            let store = RunStore::open(&required_run_dir(&common, None)?)?;
            let (bundle, dir) = write_report(&store)?;
            print!("{}", bundle.markdown);
            eprintln!("reports written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze => {
            let store = RunStore::open(&required_run_dir(&common, None)?)?;
            print!("{}", render_report(&store)?.analysis);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { p1, t_cc, t_ic, exact } => cmd_simulate(&common, p1, t_cc, t_ic, exact),
        Command::SftGen { out, max_rounds } => cmd_sft(&common, &out, max_rounds).await,
        Command::Verify { extracted, answer, gold, kind, benchmark } => {
            let kind = AnswerKind::parse(&kind)
                .ok_or_else(|| ConfigError::InvalidValue { key: "--kind".into(), message: format!("unknown answer kind {kind:?}") })?;
            let benchmark = Benchmark::parse(&benchmark)
                .ok_or_else(|| ConfigError::InvalidValue { key: "--benchmark".into(), message: format!("unknown benchmark {benchmark:?}") })?;
            let extracted = match (extracted, answer) {
                (Some(e), _) => Some(e),
                (None, Some(a)) => extract_final_answer(&a, kind),
                (None, None) => {
                    return Err(ConfigError::MissingKey { key: "--extracted or --answer".into() }.into());
                }
            };
            let hook = match &common.config {
                Some(path) => load_config(path)?.verifier_hook,
                None => None,
            };
            let task = TaskSpec { id: "verify".into(), benchmark, prompt: "-".into(), gold, answer_kind: kind };
            let verdict = Verifier::new(hook, 1).verify_task(&task, extracted.as_deref()).await;
            println!("extracted: {}", extracted.as_deref().unwrap_or("<none>"));
            println!("verdict: {}", serde_json::to_value(verdict)?.as_str().unwrap_or("?"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Loads the config and applies command-line overrides.
fn resolve_config(common: &Common) -> anyhow::Result<RunConfig> {
    let path = common.config.as_deref().ok_or(ConfigError::MissingKey { key: "--config".into() })?;
    let mut cfg = load_config(path)?;
    apply_overrides(&mut cfg, common)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common) -> Result<(), ConfigError> {
    if let Some(n) = common.rounds {
        cfg.set_rounds(n);
    }
    if let Some(b) = common.backend {
        cfg.backend_kind = match b {
            BackendChoice::Live => BackendKind::Live,
            BackendChoice::Mock => BackendKind::Mock,
        };
    }
    if let Some(c) = common.concurrency {
        cfg.concurrency = c;
    }
    if let Some(seed) = common.seed {
        cfg.mock.seed = seed;
    }
    if let Some(dir) = &common.run_dir {
        cfg.output_dir = Some(dir.clone());
    }
    cfg.validate()
}

fn required_run_dir(common: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf, ConfigError> {
    common
        .run_dir
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .ok_or(ConfigError::MissingKey { key: "--run-dir".into() })
}

fn finish(store: &RunStore, summary: &RunSummary) -> anyhow::Result<ExitCode> {
    let (bundle, dir) = write_report(store)?;
    print!("{}", bundle.markdown);
    eprintln!(
        "requested {}, cached {}, quarantined {}; reports in {}",
        summary.requested,
        summary.cached,
        summary.quarantined,
        dir.display()
    );
    if summary.is_success() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (task, chain, round) in &summary.truncated {
            eprintln!("truncated: task {task} chain {chain} at round {round}");
        }
        Ok(ExitCode::from(EXIT_TRUNCATED))
    }
}

async fn cmd_run(common: &Common) -> anyhow::Result<ExitCode> {
    let cfg = resolve_config(common)?;
    let dir = required_run_dir(common, Some(&cfg))?;
    let tasks = cfg.load_tasks()?;
    let manifest = cfg.manifest(&tasks)?;
    let backend = cfg.build_backend()?;
    let mut store = RunStore::create(&dir, manifest, tasks).map_err(|e| match e {
        StoreError::Incompatible { diff, .. } => Error::from(ConfigError::ManifestMismatch(diff)),
        other => Error::from(other),
    })?;
    let summary = run_benchmark(&mut store, backend.as_ref(), &cfg.verifier(), cfg.concurrency).await?;
    finish(&store, &summary)
}

async fn cmd_resume(common: &Common) -> anyhow::Result<ExitCode> {
    let (dir, expected, backend, verifier, concurrency) = match &common.config {
        Some(_) => {
            let cfg = resolve_config(common)?;
            let dir = required_run_dir(common, Some(&cfg))?;
            let tasks = RunStore::open(&dir)?.tasks().to_vec();
            let manifest = cfg.manifest(&tasks)?;
            (dir, Some(manifest), cfg.build_backend()?, cfg.verifier(), cfg.concurrency)
        }
        None => {
            let dir = required_run_dir(common, None)?;
            let store = RunStore::open(&dir)?;
            let manifest = store.manifest().clone();
            let backend = backend_from_manifest(&manifest.backend, common)?;
            let concurrency = common.concurrency.unwrap_or(rethink_core::config::DEFAULT_CONCURRENCY);
            (dir, None, backend, Verifier::new(manifest.verifier_hook.clone(), concurrency), concurrency)
        }
    };
    let (store, summary) = resume(&dir, expected.as_ref(), backend.as_ref(), &verifier, concurrency).await?;
    finish(&store, &summary)
}

/// Rebuilds the backend recorded in a manifest. Live runs need a config for
/// the credential, so only the mock can be rebuilt this way.
fn backend_from_manifest(descriptor: &BackendDescriptor, common: &Common) -> Result<Arc<dyn Backend>, ConfigError> {
    if common.rounds.is_some() || common.seed.is_some() || common.backend.is_some() {
        return Err(ConfigError::InvalidValue {
            key: "--rounds/--seed/--backend".into(),
            message: "changing run parameters on resume needs --config; the run directory fixes them".into(),
        });
    }
    match descriptor {
        BackendDescriptor::Mock { spec } => Ok(Arc::new(MockBackend::new(spec.clone()))),
        BackendDescriptor::Live { .. } => Err(ConfigError::MissingKey { key: "--config (live backend credentials)".into() }),
    }
}

fn cmd_simulate(common: &Common, p1: f64, t_cc: f64, t_ic: f64, exact: bool) -> anyhow::Result<ExitCode> {
    let n = common.rounds.unwrap_or(4);
    let to_cfg = |e: rethink_core::error::SimulatorError| ConfigError::InvalidValue { key: "simulate".into(), message: e.to_string() };
    let model = MarkovModel::new(p1, t_cc, t_ic).map_err(to_cfg)?;
    let curve = model.accuracy_curve(n).map_err(to_cfg)?;
    let exact_curve = if exact {
        // Go through the shortest decimal form so 0.6 becomes 3/5, not its binary value.
        let r = |v: f64| BigRational::parse_decimal(&v.to_string()).or_else(|| BigRational::from_float(v)).expect("finite probability");
        Some(MarkovModel::new(r(p1), r(t_cc), r(t_ic)).map_err(to_cfg)?.accuracy_curve(n).map_err(to_cfg)?)
    } else {
        None
    };
    println!("| Round | Accuracy (%) |{}", if exact { " Exact |" } else { "" });
    println!("|---|---|{}", if exact { "---|" } else { "" });
    for (i, a) in curve.iter().enumerate() {
        let extra = exact_curve.as_ref().map_or(String::new(), |c| format!(" {} |", c[i]));
        println!("| {} | {:.4} |{extra}", i + 1, 100.0 * a);
    }
    let plot = serde_json::json!({
        "rounds": (1..=n).collect::<Vec<_>>(),
        "accuracy": curve,
        "fixed_point": model.fixed_point(),
        "params": {"p1": p1, "t_cc": t_cc, "t_ic": t_ic},
    });
    println!("\n{}", serde_json::to_string_pretty(&plot)?);
    Ok(ExitCode::SUCCESS)
}

async fn cmd_sft(common: &Common, out: &Path, max_rounds: u32) -> anyhow::Result<ExitCode> {
    if max_rounds == 0 {
        return Err(ConfigError::InvalidValue { key: "--max-rounds".into(), message: "must be >= 1".into() }.into());
    }
    let cfg = resolve_config(common)?;
    let tasks = cfg.load_tasks()?;
    let backend = cfg.build_backend()?;
    let summary = generate_dataset(&tasks, |b| cfg.params_for(b), backend.as_ref(), &cfg.verifier(), max_rounds, cfg.concurrency, out).await?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if summary.failed > 0 { ExitCode::from(EXIT_TRUNCATED) } else { ExitCode::SUCCESS })
}
