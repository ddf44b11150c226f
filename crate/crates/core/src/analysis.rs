//! Trajectory grouping, discourse-marker frequencies and response lengths.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::{Benchmark, Chain, TokenSource, TrajectoryLabel};
use crate::error::MetricsError;
use crate::metrics::round_report;
use crate::scalar::{mean, Scalar};

/// Hesitation markers plus one decisive marker.
pub const DEFAULT_KEYWORDS: [&str; 4] = ["but", "wait", "maybe", "therefore"];

pub type TrajectoryCounts = BTreeMap<TrajectoryLabel, usize>;

fn check_pair(a: u32, b: u32) -> Result<(), MetricsError> {
    if a == 0 || a >= b {
        return Err(MetricsError::BadRoundPair { a, b });
    }
    Ok(())
}

fn label_of(chain: &Chain, a: u32, b: u32) -> Result<TrajectoryLabel, MetricsError> {
    let missing = |round| MetricsError::MissingRound { task_id: chain.task_id.clone(), chain_index: chain.chain_index, round };
    let va = chain.verdict_at(a).ok_or_else(|| missing(a))?;
    let vb = chain.verdict_at(b).ok_or_else(|| missing(b))?;
    Ok(TrajectoryLabel::from_verdicts(va, vb))
}

/// Counts chains per correctness transition from round `a` to round `b`.
/// All four labels are present in the result, possibly with zero.
pub fn classify_trajectories(chains: &[Chain], a: u32, b: u32) -> Result<TrajectoryCounts, MetricsError> {
    check_pair(a, b)?;
    let mut counts: TrajectoryCounts = TrajectoryLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for chain in chains {
        *counts.entry(label_of(chain, a, b)?).or_default() += 1;
    }
    Ok(counts)
}

/// Chains grouped by their `a -> b` label.
pub fn group_by_trajectory(chains: &[Chain], a: u32, b: u32) -> Result<BTreeMap<TrajectoryLabel, Vec<&Chain>>, MetricsError> {
    check_pair(a, b)?;
    let mut groups: BTreeMap<TrajectoryLabel, Vec<&Chain>> = TrajectoryLabel::ALL.iter().map(|l| (*l, Vec::new())).collect();
    for chain in chains {
        groups.entry(label_of(chain, a, b)?).or_default().push(chain);
    }
    Ok(groups)
}

/// `100 * (CC + IC) / N`: the round-`b` score implied by the trajectory counts
/// when every task has the same number of chains.
pub fn score_from_trajectories<T: Scalar>(counts: &TrajectoryCounts) -> Option<T> {
    let total: usize = counts.values().sum();
    if total == 0 {
        return None;
    }
    let good = counts.get(&TrajectoryLabel::CC).copied().unwrap_or(0) + counts.get(&TrajectoryLabel::IC).copied().unwrap_or(0);
    Some(T::from_ratio(100 * good as i64, total as i64))
}

/// Case-insensitive whole-word occurrences of `word` in `text`, where words
/// are maximal runs of letters.
pub fn count_word(text: &str, word: &str) -> usize {
    let target = word.to_lowercase();
    text.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty() && w.to_lowercase() == target)
        .count()
}

/// Mean per-response count of each keyword at `round`, over the thinking
/// trace and the answer. Chains without the round are skipped; with no
/// responses every mean is zero.
pub fn word_frequencies<'a, T: Scalar>(
    chains: impl IntoIterator<Item = &'a Chain>,
    round: u32,
    keywords: &[&str],
) -> Result<BTreeMap<String, T>, MetricsError> {
    if keywords.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut totals = vec![0usize; keywords.len()];
    let mut responses = 0usize;
    for response in chains.into_iter().filter_map(|c| c.round(round)) {
        responses += 1;
        for (total, kw) in totals.iter_mut().zip(keywords) {
            *total += count_word(&response.thinking, kw) + count_word(&response.answer, kw);
        }
    }
    Ok(keywords
        .iter()
        .zip(totals)
        .map(|(kw, total)| {
            let value = if responses == 0 { T::zero() } else { T::from_ratio(total as i64, responses as i64) };
            (kw.to_lowercase(), value)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupWordFrequencies {
    pub chains: usize,
    pub round_a: BTreeMap<String, f64>,
    pub round_b: BTreeMap<String, f64>,
}

/// Keyword frequencies at rounds `a` and `b` within each trajectory group.
pub fn word_frequencies_by_trajectory(
    chains: &[Chain],
    a: u32,
    b: u32,
    keywords: &[&str],
) -> Result<BTreeMap<TrajectoryLabel, GroupWordFrequencies>, MetricsError> {
    let groups = group_by_trajectory(chains, a, b)?;
    groups
        .into_iter()
        .map(|(label, members)| {
            Ok((
                label,
                GroupWordFrequencies {
                    chains: members.len(),
                    round_a: word_frequencies(members.iter().copied(), a, keywords)?,
                    round_b: word_frequencies(members.iter().copied(), b, keywords)?,
                },
            ))
        })
        .collect()
}

/// Mean completion length per benchmark and across benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats<T> {
    pub per_benchmark: BTreeMap<Benchmark, T>,
    /// Unweighted mean of the per-benchmark means.
    pub overall: T,
    /// Share of responses whose length came from whitespace counting.
    pub fallback_fraction: T,
}

impl<T: Scalar> LengthStats<T> {
    pub fn from_benchmark_means(per_benchmark: BTreeMap<Benchmark, T>) -> Result<Self, MetricsError> {
        let means: Vec<T> = per_benchmark.values().cloned().collect();
        let overall = mean(&means).ok_or(MetricsError::Empty)?;
        Ok(LengthStats { per_benchmark, overall, fallback_fraction: T::zero() })
    }

    pub fn overall_rounded(&self) -> T {
        round_report(&self.overall)
    }
}

/// Mean `completion_tokens` at `round`, per benchmark and overall.
pub fn length_stats<T: Scalar>(chains: &[Chain], round: u32) -> Result<LengthStats<T>, MetricsError> {
    let mut sums: BTreeMap<Benchmark, (u64, usize)> = BTreeMap::new();
    let mut fallback = 0usize;
    let mut total = 0usize;
    for chain in chains {
        let Some(r) = chain.round(round) else { continue };
        let entry = sums.entry(chain.benchmark).or_default();
        entry.0 += r.completion_tokens;
        entry.1 += 1;
        total += 1;
        if r.token_source == TokenSource::WhitespaceFallback {
            fallback += 1;
        }
    }
    let per_benchmark = sums
        .into_iter()
        .map(|(b, (sum, n))| (b, T::from_ratio(sum as i64, n as i64)))
        .collect();
    let mut stats = LengthStats::from_benchmark_means(per_benchmark)?;
    stats.fallback_fraction = T::from_ratio(fallback as i64, total as i64);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{RoundResponse, Verdict};
    use Verdict::*;

    fn chain(task: &str, idx: u32, rounds: &[(Verdict, &str, u64)]) -> Chain {
        Chain {
            task_id: task.into(),
            benchmark: Benchmark::Aime24,
            chain_index: idx,
            rounds: rounds
                .iter()
                .enumerate()
                .map(|(i, (v, text, tokens))| RoundResponse {
                    round: i as u32 + 1,
                    prompt_used: "Q".into(),
                    raw: text.to_string(),
                    thinking: text.to_string(),
                    answer: String::new(),
                    extracted: None,
                    completion_tokens: *tokens,
                    token_source: TokenSource::ApiUsage,
                    verdict: *v,
                    truncated: false,
                })
                .collect(),
        }
    }

    #[test]
    fn one_chain_per_bucket() {
        let chains = [
            chain("a", 0, &[(Correct, "", 0), (Correct, "", 0)]),
            chain("a", 1, &[(Correct, "", 0), (Incorrect, "", 0)]),
            chain("b", 0, &[(Incorrect, "", 0), (Correct, "", 0)]),
            chain("b", 1, &[(Unverifiable, "", 0), (Incorrect, "", 0)]),
        ];
        let counts = classify_trajectories(&chains, 1, 2).unwrap();
        assert!(counts.values().all(|&n| n == 1));
        assert_eq!(counts.values().sum::<usize>(), chains.len());
        assert_eq!(score_from_trajectories::<f64>(&counts), Some(50.0));
        assert!(classify_trajectories(&chains, 2, 1).is_err());
        assert!(classify_trajectories(&chains, 1, 3).is_err());
    }

    #[test]
    fn word_counting_rules() {
        assert_eq!(count_word("But wait... but why?", "but"), 2);
        assert_eq!(count_word("waiting", "wait"), 0);
        assert_eq!(count_word("Therefore,therefore", "therefore"), 2);
        assert_eq!(count_word("maybe_maybe", "maybe"), 2);
    }

    #[test]
    fn frequencies_average_over_responses() {
        let chains = [
            chain("a", 0, &[(Correct, "But wait... but why?", 0)]),
            chain("a", 1, &[(Correct, "wait", 0)]),
        ];
        let f = word_frequencies::<f64>(&chains, 1, &DEFAULT_KEYWORDS).unwrap();
        assert_eq!(f["but"], 1.0);
        assert_eq!(f["wait"], 1.0);
        assert_eq!(f["maybe"], 0.0);
        assert!(word_frequencies::<f64>(&chains, 1, &[]).is_err());
        let none = word_frequencies::<f64>(&chains, 5, &["but"]).unwrap();
        assert_eq!(none["but"], 0.0);
    }

    #[test]
    fn length_means() {
        let chains = [chain("a", 0, &[(Correct, "", 100)]), chain("a", 1, &[(Correct, "", 51)])];
        let stats = length_stats::<f64>(&chains, 1).unwrap();
        assert_eq!(stats.per_benchmark[&Benchmark::Aime24], 75.5);
        assert_eq!(stats.overall, 75.5);
        assert_eq!(stats.fallback_fraction, 0.0);
    }
}
