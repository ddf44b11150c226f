//! Answer normalization and correctness checks.

use std::process::Stdio;
use std::sync::Arc;

use serde::Serialize;
use tokio::io::AsyncWriteExt;
use tokio::sync::Semaphore;
use tracing::warn;

use crate::domain::{AnswerKind, Benchmark, TaskSpec, Verdict};
use crate::extraction::canonical_integer;

/// Relative tolerance for numeric equivalence of closed-form expressions.
pub const NUMERIC_RTOL: f64 = 1e-6;

const UNIT_WORDS: &[&str] = &[
    "cm", "mm", "km", "m", "meter", "meters", "inch", "inches", "ft", "foot", "feet", "mile", "miles",
    "unit", "units", "degree", "degrees", "dollar", "dollars", "cent", "cents", "second", "seconds",
    "minute", "minutes", "hour", "hours", "day", "days", "kg", "g", "gram", "grams",
];

const FUNCTION_NAMES: &[&str] = &["sqrt", "sin", "cos", "tan", "log", "ln", "exp"];

const MAX_PASSES: usize = 64;

/// Canonical form used for string comparison of math answers.
///
/// The rewrite pass is applied until the string stops changing, which makes
/// the function idempotent.
pub fn normalize_expression(expr: &str) -> String {
    let mut current = expr.trim().to_string();
    for _ in 0..MAX_PASSES {
        let next = normalize_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn normalize_pass(input: &str) -> String {
    let s = rewrite_text_wrappers(input);
    let s = strip_spacing_commands(&s);
    let s = rewrite_command(&s, &["\\dfrac", "\\tfrac", "\\frac"], 2, |args| format!("({})/({})", args[0], args[1]));
    let s = rewrite_command(&s, &["\\sqrt"], 1, |args| format!("sqrt({})", args[0]));
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    lowercase_function_names(&s)
}

/// Reads one macro argument at `pos`: a balanced `{...}` group or a single
/// plain character. Returns the argument text and the position after it.
fn read_argument(s: &str, pos: usize) -> Option<(&str, usize)> {
    let rest = &s[pos..];
    let first = rest.chars().next()?;
    match first {
        '{' => {
            let mut depth = 0usize;
            for (i, c) in rest.char_indices() {
                match c {
                    '{' => depth += 1,
                    '}' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some((&rest[1..i], pos + i + 1));
                        }
                    }
                    _ => {}
                }
            }
            None
        }
        '}' | '\\' | '[' => None,
        c if c.is_whitespace() => None,
        c => Some((&rest[..c.len_utf8()], pos + c.len_utf8())),
    }
}

fn starts_command(s: &str, at: usize, name: &str) -> bool {
    s[at..].starts_with(name)
        && !s[at + name.len()..].chars().next().is_some_and(|c| c.is_ascii_alphabetic())
}

fn rewrite_command(s: &str, names: &[&str], arity: usize, render: impl Fn(&[&str]) -> String) -> String {
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    'outer: while i < s.len() {
        if s.as_bytes()[i] == b'\\' {
            for name in names {
                if !starts_command(s, i, name) {
                    continue;
                }
                let mut pos = i + name.len();
                let mut args = Vec::with_capacity(arity);
                for _ in 0..arity {
                    match read_argument(s, pos) {
                        Some((arg, next)) => {
                            args.push(arg);
                            pos = next;
                        }
                        None => break,
                    }
                }
                if args.len() == arity {
                    out.push_str(&render(&args));
                    i = pos;
                    continue 'outer;
                }
            }
        }
        let c = s[i..].chars().next().expect("in bounds");
        out.push(c);
        i += c.len_utf8();
    }
    out
}

/// `\text{...}` keeps its content only for a bare unit word.
fn rewrite_text_wrappers(s: &str) -> String {
    rewrite_command(s, &["\\text", "\\mbox"], 1, |args| {
        let inner = args[0].trim();
        if UNIT_WORDS.contains(&inner.to_ascii_lowercase().as_str()) {
            inner.to_string()
        } else {
            String::new()
        }
    })
}

fn strip_spacing_commands(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        let rest = &s[i..];
        if rest.starts_with('$') {
            i += 1;
            continue;
        }
        if let Some(skip) = ["\\,", "\\;", "\\!"].iter().find(|t| rest.starts_with(**t)) {
            i += skip.len();
            continue;
        }
        if starts_command(s, i, "\\left") {
            i += "\\left".len();
            continue;
        }
        if starts_command(s, i, "\\right") {
            i += "\\right".len();
            continue;
        }
        let c = rest.chars().next().expect("in bounds");
        out.push(c);
        i += c.len_utf8();
    }
    out
}

fn lowercase_function_names(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if bytes[i].is_ascii_alphabetic() && (i == 0 || !(bytes[i - 1].is_ascii_alphabetic() || bytes[i - 1] == b'\\')) {
            let end = (i..bytes.len()).find(|&j| !bytes[j].is_ascii_alphabetic()).unwrap_or(bytes.len());
            let word = &s[i..end];
            let lower = word.to_ascii_lowercase();
            if bytes.get(end) == Some(&b'(') && FUNCTION_NAMES.contains(&lower.as_str()) {
                out.push_str(&lower);
            } else {
                out.push_str(word);
            }
            i = end;
            continue;
        }
        let c = s[i..].chars().next().expect("in bounds");
        out.push(c);
        i += c.len_utf8();
    }
    out
}

/// Numeric value of a normalized closed-form expression built from decimal
/// numbers, `+ - * / ^`, parentheses, `sqrt(...)` and `pi`.
pub fn evaluate(normalized: &str) -> Option<f64> {
    let tokens = tokenize(normalized)?;
    let mut parser = Parser { tokens: &tokens, pos: 0 };
    let value = parser.expr()?;
    (parser.pos == tokens.len() && value.is_finite()).then_some(value)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Open,
    Close,
    Sqrt,
    Pi,
}

fn tokenize(s: &str) -> Option<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut i = 0;
    let bytes = s.as_bytes();
    while i < bytes.len() {
        let rest = &s[i..];
        let b = bytes[i];
        if b.is_ascii_digit() || b == b'.' {
            let end = (i..bytes.len()).find(|&j| !(bytes[j].is_ascii_digit() || bytes[j] == b'.')).unwrap_or(bytes.len());
            tokens.push(Token::Num(s[i..end].parse().ok()?));
            i = end;
            continue;
        }
        let (token, len) = match b {
            b'+' => (Token::Plus, 1),
            b'-' => (Token::Minus, 1),
            b'*' => (Token::Star, 1),
            b'/' => (Token::Slash, 1),
            b'^' => (Token::Caret, 1),
            b'(' | b'{' => (Token::Open, 1),
            b')' | b'}' => (Token::Close, 1),
            _ if rest.starts_with("sqrt") => (Token::Sqrt, 4),
            _ if rest.starts_with("\\pi") => (Token::Pi, 3),
            _ if rest.starts_with("pi") => (Token::Pi, 2),
            _ if rest.starts_with("\\cdot") => (Token::Star, 5),
            _ if rest.starts_with("\\times") => (Token::Star, 6),
            _ => return None,
        };
        tokens.push(token);
        i += len;
    }
    Some(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, t: &Token) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Option<f64> {
        let mut value = self.term()?;
        loop {
            if self.eat(&Token::Plus) {
                value += self.term()?;
            } else if self.eat(&Token::Minus) {
                value -= self.term()?;
            } else {
                return Some(value);
            }
        }
    }

    fn term(&mut self) -> Option<f64> {
        let mut value = self.unary()?;
        loop {
            if self.eat(&Token::Star) {
                value *= self.unary()?;
            } else if self.eat(&Token::Slash) {
                value /= self.unary()?;
            } else if matches!(self.peek(), Some(Token::Num(_) | Token::Open | Token::Sqrt | Token::Pi)) {
                value *= self.power()?;
            } else {
                return Some(value);
            }
        }
    }

    fn unary(&mut self) -> Option<f64> {
        if self.eat(&Token::Minus) {
            return Some(-self.unary()?);
        }
        if self.eat(&Token::Plus) {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Option<f64> {
        let base = self.primary()?;
        if self.eat(&Token::Caret) {
            let exponent = self.unary()?;
            return Some(base.powf(exponent));
        }
        Some(base)
    }

    fn primary(&mut self) -> Option<f64> {
        match self.peek()?.clone() {
            Token::Num(v) => {
                self.pos += 1;
                Some(v)
            }
            Token::Pi => {
                self.pos += 1;
                Some(std::f64::consts::PI)
            }
            Token::Open => {
                self.pos += 1;
                let v = self.expr()?;
                self.eat(&Token::Close).then_some(v)
            }
            Token::Sqrt => {
                self.pos += 1;
                let v = self.primary()?;
                Some(v.sqrt())
            }
            _ => None,
        }
    }
}

fn numerically_equal(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= NUMERIC_RTOL * scale
}

/// Pure verdict for kinds that need no external process.
///
/// Code answers always come back [`Verdict::Unverifiable`] here; use
/// [`Verifier`] to route them to the configured hook.
pub fn verify(extracted: Option<&str>, gold: &str, kind: AnswerKind) -> Verdict {
    let Some(extracted) = extracted else {
        return Verdict::Unverifiable;
    };
    match kind {
        AnswerKind::Integer => match (canonical_integer(extracted), canonical_integer(gold)) {
            (Some(a), Some(b)) => verdict_of(a == b),
            _ => Verdict::Unverifiable,
        },
        AnswerKind::Choice => {
            let a = extracted.trim().to_ascii_uppercase();
            if matches!(a.as_str(), "A" | "B" | "C" | "D") {
                verdict_of(a == gold.trim().to_ascii_uppercase())
            } else {
                Verdict::Unverifiable
            }
        }
        AnswerKind::Expression => {
            let a = normalize_expression(extracted);
            let b = normalize_expression(gold);
            if a == b {
                return Verdict::Correct;
            }
            match (evaluate(&a), evaluate(&b)) {
                (Some(x), Some(y)) => verdict_of(numerically_equal(x, y)),
                _ => Verdict::Incorrect,
            }
        }
        AnswerKind::Code => Verdict::Unverifiable,
    }
}

fn verdict_of(ok: bool) -> Verdict {
    if ok {
        Verdict::Correct
    } else {
        Verdict::Incorrect
    }
}

/// Benchmark-aware checks layered on [`verify`]: AIME answers outside
/// `[0, 999]` are unverifiable.
pub fn verify_for_task(extracted: Option<&str>, task: &TaskSpec) -> Verdict {
    if task.benchmark == Benchmark::Aime24 && task.answer_kind == AnswerKind::Integer {
        if let Some(value) = extracted.and_then(canonical_integer).and_then(|v| v.parse::<i128>().ok()) {
            if !(0..=999).contains(&value) {
                return Verdict::Unverifiable;
            }
        }
    }
    verify(extracted, &task.gold, task.answer_kind)
}

#[derive(Serialize)]
struct HookInput<'a> {
    task_id: &'a str,
    extracted: &'a str,
    gold: &'a str,
}

/// Verifier that routes code answers to an external command.
///
/// The command reads `{"task_id", "extracted", "gold"}` on stdin and exits
/// 0 (correct), 1 (incorrect) or 2 (unverifiable).
#[derive(Debug, Clone)]
pub struct Verifier {
    hook: Option<Vec<String>>,
    permits: Arc<Semaphore>,
}

impl Default for Verifier {
    fn default() -> Self {
        Verifier::new(None, 8)
    }
}

impl Verifier {
    pub fn new(hook: Option<Vec<String>>, max_concurrent: usize) -> Self {
        Verifier {
            hook: hook.filter(|h| !h.is_empty()),
            permits: Arc::new(Semaphore::new(max_concurrent.max(1))),
        }
    }

    pub fn has_hook(&self) -> bool {
        self.hook.is_some()
    }

    pub async fn verify_task(&self, task: &TaskSpec, extracted: Option<&str>) -> Verdict {
        if task.answer_kind != AnswerKind::Code {
            return verify_for_task(extracted, task);
        }
        let (Some(hook), Some(code)) = (&self.hook, extracted) else {
            return Verdict::Unverifiable;
        };
        let _permit = self.permits.acquire().await.expect("verifier semaphore never closes");
        match run_hook(hook, task, code).await {
            Ok(v) => v,
            Err(e) => {
                warn!(task = %task.id, error = %e, "verifier hook failed");
                Verdict::Unverifiable
            }
        }
    }
}

async fn run_hook(hook: &[String], task: &TaskSpec, code: &str) -> std::io::Result<Verdict> {
    let input = serde_json::to_vec(&HookInput { task_id: &task.id, extracted: code, gold: &task.gold })?;
    let mut child = tokio::process::Command::new(&hook[0])
        .args(&hook[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::inherit())
        .spawn()?;
    if let Some(mut stdin) = child.stdin.take() {
        stdin.write_all(&input).await?;
    }
    let status = child.wait().await?;
    Ok(match status.code() {
        Some(0) => Verdict::Correct,
        Some(1) => Verdict::Incorrect,
        _ => Verdict::Unverifiable,
    })
}
