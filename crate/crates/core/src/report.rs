//! Report rendering from a run directory.
//!
//! Rendering is a pure function of the store contents: the same records
//! always produce the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    classify_trajectories, length_stats, word_frequencies, word_frequencies_by_trajectory, GroupWordFrequencies,
    TrajectoryCounts, DEFAULT_KEYWORDS,
};
use crate::domain::{Benchmark, Chain, TrajectoryLabel};
use crate::error::{Error, MetricsError};
use crate::metrics::{benchmark_round_score, chains_with_round, mean_score, round_report};
use crate::simulator::{fit_transitions, MarkovModel, TransitionFit};
use crate::store::RunStore;

pub const REPORT_MARKDOWN: &str = "report.md";
pub const REPORT_CSV: &str = "results.csv";
pub const PLOT_DATA: &str = "plot_data.json";
pub const ANALYSIS_JSON: &str = "analysis.json";

/// Rounds the Markov projection extends to.
pub const PROJECTION_ROUNDS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBundle {
    pub markdown: String,
    pub csv: String,
    pub plot_data: String,
    pub analysis: String,
}

#[derive(Debug, Clone, Serialize)]
struct RoundRow {
    round: u32,
    scores: BTreeMap<Benchmark, f64>,
    average: Option<f64>,
    mean_tokens: BTreeMap<Benchmark, f64>,
    mean_tokens_overall: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct PairAnalysis {
    round_a: u32,
    round_b: u32,
    counts: TrajectoryCounts,
    per_benchmark: BTreeMap<Benchmark, TrajectoryCounts>,
    keywords_by_trajectory: BTreeMap<TrajectoryLabel, GroupWordFrequencies>,
}

#[derive(Debug, Clone, Serialize)]
struct Analysis {
    complete: bool,
    records: usize,
    expected_records: usize,
    keywords_by_round: BTreeMap<u32, BTreeMap<String, f64>>,
    pairs: Vec<PairAnalysis>,
    transition_fit: Option<TransitionFit<f64>>,
    projection: Option<Vec<f64>>,
    fixed_point: Option<f64>,
}

fn max_rounds(store: &RunStore) -> u32 {
    store.manifest().params.values().map(|p| p.n_rounds).max().unwrap_or(0)
}

fn round_rows(chains: &[Chain], benchmarks: &[Benchmark], rounds: u32) -> Result<Vec<RoundRow>, MetricsError> {
    let mut rows = Vec::new();
    for round in 1..=rounds {
        let present = chains_with_round(chains, round);
        let mut scores = BTreeMap::new();
        for b in benchmarks {
            let of_b: Vec<Chain> = present.iter().filter(|c| c.benchmark == *b).cloned().collect();
            if !of_b.is_empty() {
                scores.insert(*b, benchmark_round_score::<f64>(&of_b, round)?);
            }
        }
        let values: Vec<f64> = scores.values().copied().collect();
        let average = mean_score(&values).ok();
        let (mean_tokens, mean_tokens_overall) = match length_stats::<f64>(&present, round) {
            Ok(s) => (s.per_benchmark, Some(s.overall)),
            Err(_) => (BTreeMap::new(), None),
        };
        rows.push(RoundRow { round, scores, average, mean_tokens, mean_tokens_overall });
    }
    Ok(rows)
}

fn analyse(store: &RunStore, chains: &[Chain], rounds: u32) -> Result<Analysis, MetricsError> {
    let mut keywords_by_round = BTreeMap::new();
    for round in 1..=rounds {
        keywords_by_round.insert(round, word_frequencies::<f64>(chains, round, &DEFAULT_KEYWORDS)?);
    }
    let mut pairs = Vec::new();
    let mut pooled: TrajectoryCounts = TrajectoryLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for a in 1..rounds {
        let b = a + 1;
        let both = chains_with_round(chains, b);
        let counts = classify_trajectories(&both, a, b)?;
        let mut per_benchmark = BTreeMap::new();
        for bench in store.manifest().params.keys() {
            let of_b: Vec<Chain> = both.iter().filter(|c| c.benchmark == *bench).cloned().collect();
            if !of_b.is_empty() {
                per_benchmark.insert(*bench, classify_trajectories(&of_b, a, b)?);
            }
        }
        for (label, n) in &counts {
            *pooled.entry(*label).or_default() += n;
        }
        pairs.push(PairAnalysis {
            round_a: a,
            round_b: b,
            keywords_by_trajectory: word_frequencies_by_trajectory(&both, a, b, &DEFAULT_KEYWORDS)?,
            counts,
            per_benchmark,
        });
    }

    let (mut transition_fit, mut projection, mut fixed_point) = (None, None, None);
    if !pairs.is_empty() {
        let fit = fit_transitions::<f64>(&pooled);
        let first = chains_with_round(chains, 1);
        if let (Some(t_cc), Some(t_ic), false) = (fit.t_cc, fit.t_ic, first.is_empty()) {
            let correct = first.iter().filter(|c| c.verdict_at(1).is_some_and(|v| v.is_correct())).count();
            let p1 = correct as f64 / first.len() as f64;
            if let Ok(model) = MarkovModel::new(p1, t_cc, t_ic) {
                projection = model.accuracy_curve(PROJECTION_ROUNDS.max(rounds)).ok();
                fixed_point = model.fixed_point();
            }
        }
        transition_fit = Some(fit);
    }
    Ok(Analysis {
        complete: store.is_complete(),
        records: store.record_count(),
        expected_records: store.expected_record_count(),
        keywords_by_round,
        pairs,
        transition_fit,
        projection,
        fixed_point,
    })
}

fn share(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

/// Markdown rounding: scores, lengths and shares to one decimal (half away
/// from zero), keyword frequencies to two, transition estimates to four.
fn fmt1(v: f64) -> String {
    format!("{:.1}", round_report(&v))
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn markdown(store: &RunStore, benchmarks: &[Benchmark], rows: &[RoundRow], analysis: &Analysis) -> String {
    let m = store.manifest();
    let mut out = String::new();
    let _ = writeln!(out, "# Run report\n");
    let _ = writeln!(out, "- run: `{}`", m.run_id);
    let _ = writeln!(out, "- model: `{}`", m.model_id);
    let _ = writeln!(out, "- dataset: `{}` ({} tasks)", m.dataset_hash, store.tasks().len());
    let _ = writeln!(out, "- records: {} / {}\n", analysis.records, analysis.expected_records);
    if !analysis.complete {
        let _ = writeln!(
            out,
            "> **Warning:** incomplete run. {} of {} records are present; scores below cover only the chains that reached each round.\n",
            analysis.records, analysis.expected_records
        );
    }

    let header: Vec<&str> = benchmarks.iter().map(|b| b.as_str()).collect();
    let _ = writeln!(out, "## pass@1 (%)\n");
    let _ = writeln!(out, "| Round | {} | Average |", header.join(" | "));
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(benchmarks.len()));
    for row in rows {
        let cells: Vec<String> = benchmarks.iter().map(|b| row.scores.get(b).map_or("-".into(), |v| fmt1(*v))).collect();
        let _ = writeln!(out, "| {} | {} | {} |", row.round, cells.join(" | "), row.average.map_or("-".into(), fmt1));
    }

    let _ = writeln!(out, "\n## Mean completion tokens\n");
    let _ = writeln!(out, "| Round | {} | Overall |", header.join(" | "));
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(benchmarks.len()));
    for row in rows {
        let cells: Vec<String> = benchmarks.iter().map(|b| row.mean_tokens.get(b).map_or("-".into(), |v| fmt1(*v))).collect();
        let _ = writeln!(out, "| {} | {} | {} |", row.round, cells.join(" | "), row.mean_tokens_overall.map_or("-".into(), fmt1));
    }

    let _ = writeln!(out, "\n## Analysis\n");
    if analysis.pairs.is_empty() {
        let _ = writeln!(out, "_Needs at least two rounds._");
        return out;
    }
    let kw_header = DEFAULT_KEYWORDS.join(" | ");
    let _ = writeln!(out, "### Keyword frequency per response\n");
    let _ = writeln!(out, "| Round | {kw_header} |");
    let _ = writeln!(out, "|---|{}", "---|".repeat(DEFAULT_KEYWORDS.len()));
    for (round, freq) in &analysis.keywords_by_round {
        let cells: Vec<String> = DEFAULT_KEYWORDS.iter().map(|k| fmt2(freq[*k])).collect();
        let _ = writeln!(out, "| {round} | {} |", cells.join(" | "));
    }

    for pair in &analysis.pairs {
        let (a, b) = (pair.round_a, pair.round_b);
        let total: usize = pair.counts.values().sum();
        let _ = writeln!(out, "\n### Trajectories, round {a} to round {b}\n");
        let _ = writeln!(out, "| Trajectory | Chains | Share (%) | {} |", DEFAULT_KEYWORDS.iter().map(|k| format!("{k} r{a} / r{b}")).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(out, "|---|---|---|{}", "---|".repeat(DEFAULT_KEYWORDS.len()));
        for label in TrajectoryLabel::ALL {
            let n = pair.counts[&label];
            let share = share(n, total);
            let g = &pair.keywords_by_trajectory[&label];
            let kw: Vec<String> = DEFAULT_KEYWORDS.iter().map(|k| format!("{} / {}", fmt2(g.round_a[*k]), fmt2(g.round_b[*k]))).collect();
            let _ = writeln!(out, "| {label} | {n} | {} | {} |", fmt1(share), kw.join(" | "));
        }
    }

    if let Some(fit) = &analysis.transition_fit {
        let _ = writeln!(out, "\n### Transition fit\n");
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(out, "- t_cc = {}", show(fit.t_cc));
        let _ = writeln!(out, "- t_ic = {}", show(fit.t_ic));
        for d in &fit.diagnostics {
            let _ = writeln!(out, "- note: {d}");
        }
        if let Some(curve) = &analysis.projection {
            let points: Vec<String> = curve.iter().map(|a| fmt1(100.0 * a)).collect();
            let _ = writeln!(out, "- projected chain accuracy (%), rounds 1..{}: {}", curve.len(), points.join(", "));
        }
        if let Some(fp) = analysis.fixed_point {
            let _ = writeln!(out, "- limit: {}%", fmt1(100.0 * fp));
        }
    }
    out
}

fn csv(rows: &[RoundRow], analysis: &Analysis) -> String {
    let mut out = String::from("metric,benchmark,round,value\n");
    for row in rows {
        for (b, v) in &row.scores {
            let _ = writeln!(out, "pass_at_1,{b},{},{v}", row.round);
        }
        if let Some(v) = row.average {
            let _ = writeln!(out, "pass_at_1,average,{},{v}", row.round);
        }
        for (b, v) in &row.mean_tokens {
            let _ = writeln!(out, "mean_tokens,{b},{},{v}", row.round);
        }
        if let Some(v) = row.mean_tokens_overall {
            let _ = writeln!(out, "mean_tokens,overall,{},{v}", row.round);
        }
    }
    for (round, freq) in &analysis.keywords_by_round {
        for (kw, v) in freq {
            let _ = writeln!(out, "keyword_{kw},all,{round},{v}");
        }
    }
    for pair in &analysis.pairs {
        let span = format!("{}-{}", pair.round_a, pair.round_b);
        let total: usize = pair.counts.values().sum();
        for (label, n) in &pair.counts {
            let _ = writeln!(out, "trajectory_{label},all,{span},{n}");
            let _ = writeln!(out, "trajectory_share_{label},all,{span},{}", share(*n, total));
        }
        for (label, g) in &pair.keywords_by_trajectory {
            for (kw, v) in &g.round_a {
                let _ = writeln!(out, "keyword_{kw}_{label},all,{},{v}", pair.round_a);
            }
            for (kw, v) in &g.round_b {
                let _ = writeln!(out, "keyword_{kw}_{label},all,{},{v}", pair.round_b);
            }
        }
    }
    if let Some(fit) = &analysis.transition_fit {
        if let Some(v) = fit.t_cc {
            let _ = writeln!(out, "t_cc,all,,{v}");
        }
        if let Some(v) = fit.t_ic {
            let _ = writeln!(out, "t_ic,all,,{v}");
        }
    }
    for (i, a) in analysis.projection.iter().flatten().enumerate() {
        let _ = writeln!(out, "projected_accuracy,all,{},{}", i + 1, 100.0 * a);
    }
    if let Some(fp) = analysis.fixed_point {
        let _ = writeln!(out, "projected_limit,all,,{}", 100.0 * fp);
    }
    out
}

/// Renders every report artifact for the current store contents.
pub fn render_report(store: &RunStore) -> Result<ReportBundle, MetricsError> {
    let chains = store.chains();
    let benchmarks: Vec<Benchmark> = store.manifest().params.keys().copied().collect();
    let rounds = max_rounds(store);
    let rows = round_rows(&chains, &benchmarks, rounds)?;
    let analysis = analyse(store, &chains, rounds)?;

    let plot = json!({
        "rounds": rows.iter().map(|r| r.round).collect::<Vec<_>>(),
        "pass_at_1": benchmarks.iter().map(|b| (b.as_str(), rows.iter().map(|r| r.scores.get(b).copied()).collect::<Vec<_>>())).collect::<BTreeMap<_, _>>(),
        "average": rows.iter().map(|r| r.average).collect::<Vec<_>>(),
        "mean_tokens": benchmarks.iter().map(|b| (b.as_str(), rows.iter().map(|r| r.mean_tokens.get(b).copied()).collect::<Vec<_>>())).collect::<BTreeMap<_, _>>(),
        "mean_tokens_overall": rows.iter().map(|r| r.mean_tokens_overall).collect::<Vec<_>>(),
        "keywords_by_round": analysis.keywords_by_round,
        "trajectories": analysis.pairs.iter().map(|p| json!({"round_a": p.round_a, "round_b": p.round_b, "counts": p.counts})).collect::<Vec<_>>(),
        "projection": analysis.projection,
    });
    Ok(ReportBundle {
        markdown: markdown(store, &benchmarks, &rows, &analysis),
        csv: csv(&rows, &analysis),
        plot_data: pretty(&plot),
        analysis: pretty(&json!({ "rounds": rows, "analysis": analysis })),
    })
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    s
}

/// Renders and writes the report files into the run's `reports/` directory.
pub fn write_report(store: &RunStore) -> Result<(ReportBundle, PathBuf), Error> {
    let bundle = render_report(store)?;
    let dir = store.reports_dir();
    let io = |path: PathBuf| move |source| Error::Io { path, source };
    fs::create_dir_all(&dir).map_err(io(dir.clone()))?;
    for (name, body) in [
        (REPORT_MARKDOWN, &bundle.markdown),
        (REPORT_CSV, &bundle.csv),
        (PLOT_DATA, &bundle.plot_data),
        (ANALYSIS_JSON, &bundle.analysis),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(path.clone()))?;
    }
    Ok((bundle, dir))
}
