//! Pulls a comparable final value out of an answer segment.
//!
//! The last match wins everywhere: models often revise themselves mid-answer
//! and the final statement is the one they commit to.

use std::sync::OnceLock;

use regex::Regex;

use crate::domain::AnswerKind;
use crate::verification::normalize_expression;

const BOXED: &str = "\\boxed{";

/// Contents of the last `\boxed{...}` group, with nested braces kept.
///
/// Only the last `\boxed{` is considered; if its braces never balance the
/// result is `None` even when an earlier group was well formed.
pub fn extract_boxed(answer: &str) -> Option<&str> {
    let start = answer.rfind(BOXED)? + BOXED.len();
    let mut depth = 1usize;
    for (offset, byte) in answer.as_bytes()[start..].iter().enumerate() {
        match byte {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&answer[start..start + offset]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts the final answer for the given kind; `None` means extraction failed.
pub fn extract_final_answer(answer: &str, kind: AnswerKind) -> Option<String> {
    match kind {
        AnswerKind::Integer => extract_boxed(answer)
            .and_then(canonical_integer)
            .or_else(|| last_integer_token(answer)),
        AnswerKind::Expression => extract_boxed(answer).map(str::to_string),
        AnswerKind::Choice => extract_choice(answer),
        AnswerKind::Code => extract_code_block(answer),
    }
}

/// Normalizes `text` and returns its canonical integer spelling when it is
/// integral: `"1,000"`, `"+7"`, `"204.00"` and `"\text{17}"`-style wrappers
/// are accepted.
pub fn canonical_integer(text: &str) -> Option<String> {
    let normalized = normalize_expression(text);
    let mut s = normalized.as_str();
    s = s.strip_prefix('+').unwrap_or(s);
    let (negative, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let digits = strip_thousands_separators(digits)?;
    let digits = match digits.split_once('.') {
        Some((whole, frac)) if frac.bytes().all(|b| b == b'0') => whole.to_string(),
        Some(_) => return None,
        None => digits,
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let value: i128 = digits.parse().ok()?;
    let value = if negative { -value } else { value };
    Some(value.to_string())
}

fn strip_thousands_separators(s: &str) -> Option<String> {
    if !s.contains(',') {
        return Some(s.to_string());
    }
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (s, None),
    };
    let mut groups = whole.split(',');
    let first = groups.next()?;
    if first.is_empty() || first.len() > 3 {
        return None;
    }
    let mut out = first.to_string();
    for group in groups {
        if group.len() != 3 {
            return None;
        }
        out.push_str(group);
    }
    if let Some(f) = frac {
        out.push('.');
        out.push_str(f);
    }
    Some(out)
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Last integer that stands alone: not glued to letters, digits, or a decimal point.
fn last_integer_token(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut best = None;
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        // Thousands groups: 1,000 or 12,345,678.
        if i - start <= 3 {
            while bytes.get(i) == Some(&b',')
                && bytes.len() >= i + 4
                && bytes[i + 1..i + 4].iter().all(u8::is_ascii_digit)
                && !bytes.get(i + 4).is_some_and(u8::is_ascii_digit)
            {
                i += 4;
            }
        }
        let end = i;
        let before = start.checked_sub(1).map(|p| bytes[p]);
        let after = bytes.get(end).copied();
        let glued_before = matches!(before, Some(b) if is_word_byte(b) || b == b'.');
        let glued_after = match after {
            Some(b'.') => bytes.get(end + 1).is_some_and(|b| b.is_ascii_digit()),
            Some(b) => is_word_byte(b),
            None => false,
        };
        if glued_before || glued_after {
            continue;
        }
        let negative = before == Some(b'-')
            && start
                .checked_sub(2)
                .map_or(true, |p| !is_word_byte(bytes[p]) && bytes[p] != b'.');
        let value: i128 = match text[start..end].replace(',', "").parse() {
            Ok(v) => v,
            Err(_) => continue,
        };
        best = Some(if negative { -value } else { value });
    }
    best.map(|v| v.to_string())
}

fn choice_patterns() -> &'static [Regex] {
    static PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            r"\(\s*([A-Da-d])\s*\)",
            r"(?i:option|choice)\s+\(?([A-Da-d])\b",
            r"(?i:answer)\s*(?:(?i:is)\s*)?:?\s*\**\s*\(?([A-D])\b",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("valid choice pattern"))
        .collect()
    })
}

/// Last choice letter. Parenthesized and "option X" forms accept either case;
/// bare letters must be uppercase so the article "a" is never read as a choice.
fn extract_choice(answer: &str) -> Option<String> {
    if let Some(boxed) = extract_boxed(answer) {
        let inner = normalize_expression(boxed);
        let inner = inner.trim_matches(|c| c == '(' || c == ')');
        if inner.len() == 1 && matches!(inner.as_bytes()[0].to_ascii_uppercase(), b'A'..=b'D') {
            return Some(inner.to_ascii_uppercase());
        }
    }
    let preferred = choice_patterns()
        .iter()
        .flat_map(|re| re.captures_iter(answer))
        .filter_map(|c| c.get(1))
        .max_by_key(|m| m.start());
    if let Some(m) = preferred {
        return Some(m.as_str().to_ascii_uppercase());
    }
    let bytes = answer.as_bytes();
    (0..bytes.len())
        .rev()
        .find(|&i| {
            matches!(bytes[i], b'A'..=b'D')
                && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric())
                && bytes.get(i + 1).map_or(true, |b| !b.is_ascii_alphanumeric())
        })
        .map(|i| (bytes[i] as char).to_string())
}

fn extract_code_block(answer: &str) -> Option<String> {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let re = FENCE.get_or_init(|| Regex::new(r"(?s)```[^\n`]*\n(.*?)```").expect("valid fence pattern"));
    re.captures_iter(answer).last().and_then(|c| c.get(1)).map(|m| m.as_str().to_string())
}
