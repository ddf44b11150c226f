//! pass@1 per round, benchmark scores and the global average.

use crate::domain::{Chain, Verdict};
use crate::error::MetricsError;
use crate::scalar::{mean, Scalar};

/// Reported values carry one decimal.
pub const REPORT_DECIMALS: u32 = 1;

/// Fraction of verdicts that are correct. Unverifiable counts as incorrect.
pub fn pass_at_1<T: Scalar>(verdicts: &[Verdict]) -> Result<T, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let correct = verdicts.iter().filter(|v| v.is_correct()).count();
    Ok(T::from_ratio(correct as i64, verdicts.len() as i64))
}

/// Mean over tasks of per-task pass@1 at `round`, in percent.
///
/// Tasks are weighted equally regardless of how many chains each has. Every
/// chain must contain `round`.
pub fn benchmark_round_score<T: Scalar>(chains: &[Chain], round: u32) -> Result<T, MetricsError> {
    let mut per_task: Vec<(&str, Vec<Verdict>)> = Vec::new();
    for chain in chains {
        let verdict = chain.verdict_at(round).ok_or_else(|| MetricsError::MissingRound {
            task_id: chain.task_id.clone(),
            chain_index: chain.chain_index,
            round,
        })?;
        match per_task.iter_mut().find(|(id, _)| *id == chain.task_id) {
            Some((_, verdicts)) => verdicts.push(verdict),
            None => per_task.push((&chain.task_id, vec![verdict])),
        }
    }
    let rates = per_task
        .iter()
        .map(|(_, v)| pass_at_1::<T>(v))
        .collect::<Result<Vec<T>, _>>()?;
    let avg = mean(&rates).ok_or(MetricsError::Empty)?;
    Ok(avg * T::from_ratio(100, 1))
}

/// Chains that reached `round`; truncated chains drop out of later rounds.
pub fn chains_with_round(chains: &[Chain], round: u32) -> Vec<Chain> {
    chains.iter().filter(|c| c.round(round).is_some()).cloned().collect()
}

pub fn round_report<T: Scalar>(value: &T) -> T {
    value.round_half_away(REPORT_DECIMALS)
}

/// Unweighted mean of benchmark scores, before rounding.
pub fn mean_score<T: Scalar>(scores: &[T]) -> Result<T, MetricsError> {
    mean(scores).ok_or(MetricsError::Empty)
}

/// Unweighted mean of benchmark scores rounded half away from zero to one
/// decimal: `[79.7, 97.6, 74.0, 65.3]` averages to 79.15 and reports 79.2.
pub fn global_average<T: Scalar>(scores: &[T]) -> Result<T, MetricsError> {
    mean_score(scores).map(|m| round_report(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Benchmark, RoundResponse, TokenSource};
    use num_rational::BigRational;
    use Verdict::*;

    pub(crate) fn chain(task: &str, idx: u32, verdicts: &[Verdict]) -> Chain {
        Chain {
            task_id: task.into(),
            benchmark: Benchmark::Aime24,
            chain_index: idx,
            rounds: verdicts
                .iter()
                .enumerate()
                .map(|(i, v)| RoundResponse {
                    round: i as u32 + 1,
                    prompt_used: "Q".into(),
                    raw: String::new(),
                    thinking: String::new(),
                    answer: String::new(),
                    extracted: None,
                    completion_tokens: 0,
                    token_source: TokenSource::ApiUsage,
                    verdict: *v,
                    truncated: false,
                })
                .collect(),
        }
    }

    #[test]
    fn pass_at_1_examples() {
        assert_eq!(pass_at_1::<f64>(&[Correct, Correct, Incorrect, Incorrect]), Ok(0.5));
        assert_eq!(pass_at_1::<f64>(&[Correct, Correct]), Ok(1.0));
        assert_eq!(pass_at_1::<f64>(&[Correct, Unverifiable]), Ok(0.5));
        assert_eq!(pass_at_1::<f64>(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn task_level_mean() {
        let one = [chain("a", 0, &[Correct]), chain("a", 1, &[Incorrect]), chain("a", 2, &[Incorrect]), chain("a", 3, &[Incorrect])];
        assert_eq!(benchmark_round_score::<f64>(&one, 1), Ok(25.0));
        // Unequal k: pooled mean would be 3/4, task-level mean is 1/2.
        let two = [chain("a", 0, &[Correct]), chain("a", 1, &[Correct]), chain("a", 2, &[Correct]), chain("b", 0, &[Incorrect])];
        assert_eq!(benchmark_round_score::<f64>(&two, 1), Ok(50.0));
    }

    #[test]
    fn missing_round_names_chain() {
        let chains = [chain("a", 3, &[Correct])];
        assert_eq!(
            benchmark_round_score::<f64>(&chains, 2),
            Err(MetricsError::MissingRound { task_id: "a".into(), chain_index: 3, round: 2 })
        );
    }

    #[test]
    fn global_average_examples() {
        assert_eq!(global_average(&[79.7, 97.6, 74.0, 65.3]), Ok(79.2));
        assert_eq!(global_average(&[80.3, 97.2, 65.9, 63.0]), Ok(76.6));
        assert_eq!(global_average(&[82.1, 97.8, 67.2, 64.7]), Ok(78.0));
        assert_eq!(global_average(&[12.34]), Ok(12.3));
        assert_eq!(global_average::<f64>(&[]), Err(MetricsError::Empty));
        let exact: Vec<BigRational> = ["79.7", "97.6", "74.0", "65.3"].iter().map(|s| BigRational::parse_decimal(s).unwrap()).collect();
        assert_eq!(global_average(&exact).unwrap(), BigRational::parse_decimal("79.2").unwrap());
    }
}
