//! Round prompt construction and thinking/answer splitting.

use crate::error::PromptError;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

/// Sentence marker shared by every re-answer prompt.
pub const PREVIOUS_ANSWER_MARKER: &str = "The assistant's previous answer is";

/// Builds the prompt for a round.
///
/// Round 1 (`prev_answer == None`) is the user prompt unchanged. Later rounds
/// append one line that quotes the previous round's answer segment:
///
/// ```text
/// {user_prompt}
/// The assistant's previous answer is: <answer> {prev_answer} </answer>, and please re-answer.
/// ```
///
/// The previous answer is always inlined against the *original* prompt, so
/// prompts never nest across rounds.
pub fn build_round_prompt(user_prompt: &str, prev_answer: Option<&str>) -> Result<String, PromptError> {
    if user_prompt.is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    Ok(match prev_answer {
        None => user_prompt.to_string(),
        Some(answer) => format!(
            "{user_prompt}\n{PREVIOUS_ANSWER_MARKER}: <answer> {answer} </answer>, and please re-answer."
        ),
    })
}

/// Thinking trace and answer segment of one completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub thinking: String,
    pub answer: String,
}

/// Splits a raw completion at the last `</think>`.
///
/// Everything before the last close tag is the thinking trace (with a leading
/// `<think>` removed), everything after it is the answer. Both are trimmed.
/// Without a close tag the whole completion is the answer.
pub fn split_thinking(raw: &str) -> Split {
    match raw.rfind(THINK_CLOSE) {
        Some(pos) => {
            let before = raw[..pos].trim();
            let thinking = before.strip_prefix(THINK_OPEN).unwrap_or(before).trim();
            Split {
                thinking: thinking.to_string(),
                answer: raw[pos + THINK_CLOSE.len()..].trim().to_string(),
            }
        }
        None => Split { thinking: String::new(), answer: raw.trim().to_string() },
    }
}

/// Split for backends that return the reasoning in a separate field.
pub fn split_with_reasoning(content: &str, reasoning: Option<&str>) -> Split {
    match reasoning {
        Some(r) => Split { thinking: r.trim().to_string(), answer: content.trim().to_string() },
        None => split_thinking(content),
    }
}

/// Reassembles a raw completion from a separately delivered reasoning field
/// so that [`split_thinking`] recovers the same segments offline.
pub fn join_reasoning(reasoning: &str, content: &str) -> String {
    format!("{THINK_OPEN}{reasoning}{THINK_CLOSE}{content}")
}
