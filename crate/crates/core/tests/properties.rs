mod common;

use num_rational::BigRational;
use proptest::prelude::*;
use rethink_core::analysis::word_frequencies;
use rethink_core::domain::{AnswerKind, Benchmark, Chain, MockModelSpec, RoundResponse, TokenSource, Verdict};
use rethink_core::extraction::{extract_boxed, extract_final_answer};
use rethink_core::metrics::pass_at_1;
use rethink_core::prompting::{build_round_prompt, split_thinking, PREVIOUS_ANSWER_MARKER};
use rethink_core::scalar::Scalar;
use rethink_core::simulator::MarkovModel;
use rethink_core::verification::{normalize_expression, verify, Verifier};

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 .,:?!{}\\\\\n]{0,40}"
}

proptest! {
    #[test]
    fn round_prompt_shape(user in "[a-zA-Z0-9 ?\n]{1,40}", a1 in text(), a2 in text()) {
        let p2 = build_round_prompt(&user, Some(&a1)).unwrap();
        let head = format!("{user}\n{PREVIOUS_ANSWER_MARKER}: <answer> ");
        prop_assert!(p2.starts_with(&head));
        prop_assert!(p2.ends_with(" </answer>, and please re-answer."));
        prop_assert!(p2.contains(&a1));
        let p3 = build_round_prompt(&user, Some(&a2)).unwrap();
        prop_assert_eq!(p3.matches(PREVIOUS_ANSWER_MARKER).count(), 1);
        prop_assert!(!p3.contains(&p2) || a2.contains(&p2));
        prop_assert_eq!(build_round_prompt(&user, None).unwrap(), user);
    }

    #[test]
    fn split_recovers_parts(thinking in "[a-z <>/\n]{0,30}", answer in "[a-z <>/\n]{0,30}") {
        prop_assume!(!thinking.contains("</think>") && !answer.contains("</think>"));
        prop_assume!(!thinking.trim_start().starts_with("<think>"));
        let split = split_thinking(&format!("<think>{thinking}</think>{answer}"));
        prop_assert_eq!(split.thinking, thinking.trim());
        prop_assert_eq!(split.answer, answer.trim());
        let bare = split_thinking(&answer);
        prop_assert_eq!(bare.thinking, "");
        prop_assert_eq!(bare.answer, answer.trim());
    }

    #[test]
    fn boxed_matches_scanner(s in nested(6)) {
        let wrapped = format!("so \\boxed{{{s}}} done");
        prop_assert_eq!(extract_boxed(&wrapped), Some(s.as_str()));
        let cut = &wrapped[..wrapped.len() - " done".len() - 1];
        prop_assert_eq!(extract_boxed(cut), oracle_boxed(cut));
    }

    #[test]
    fn normalization_is_idempotent(s in "[a-z0-9 {}()+*/^\\\\.,$-]{0,30}") {
        let once = normalize_expression(&s);
        prop_assert_eq!(normalize_expression(&once), once);
    }

    #[test]
    fn pass_at_1_properties(mut verdicts in prop::collection::vec(prop::sample::select(vec![Verdict::Correct, Verdict::Incorrect, Verdict::Unverifiable]), 1..40), seed in any::<u64>()) {
        let base = pass_at_1::<BigRational>(&verdicts).unwrap();
        let mut shuffled = verdicts.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed as usize) % n);
        prop_assert_eq!(pass_at_1::<BigRational>(&shuffled).unwrap(), base.clone());
        if let Some(i) = verdicts.iter().position(|v| !v.is_correct()) {
            verdicts[i] = Verdict::Correct;
            prop_assert!(pass_at_1::<BigRational>(&verdicts).unwrap() > base);
        }
    }

    #[test]
    fn markov_approaches_fixed_point(p1 in 0.0..=1.0f64, t_cc in 0.0..=1.0f64, t_ic in 0.0..=1.0f64) {
        let model = MarkovModel::new(p1, t_cc, t_ic).unwrap();
        let curve = model.accuracy_curve(12).unwrap();
        match model.fixed_point() {
            Some(fp) => {
                for w in curve.windows(2) {
                    prop_assert!((w[1] - fp).abs() <= (w[0] - fp).abs() + 1e-12);
                }
                // Below the fixed point accuracy never decreases.
                if t_cc >= t_ic && p1 <= fp {
                    for w in curve.windows(2) {
                        prop_assert!(w[1] >= w[0] - 1e-12);
                    }
                }
            }
            None => prop_assert!(curve.iter().all(|a| (a - p1).abs() < 1e-15)),
        }
    }

    #[test]
    fn word_frequencies_are_additive(a in prop::collection::vec(text(), 0..6), b in prop::collection::vec(text(), 0..6)) {
        let kws = ["but", "wait", "maybe", "therefore"];
        let left: Vec<Chain> = a.iter().map(|t| chain_with_text(t)).collect();
        let right: Vec<Chain> = b.iter().map(|t| chain_with_text(t)).collect();
        let all: Vec<Chain> = left.iter().chain(right.iter()).cloned().collect();
        let fa = word_frequencies::<BigRational>(&left, 1, &kws).unwrap();
        let fb = word_frequencies::<BigRational>(&right, 1, &kws).unwrap();
        let fall = word_frequencies::<BigRational>(&all, 1, &kws).unwrap();
        let size = |n: usize| BigRational::from_usize(n);
        for k in kws {
            prop_assert_eq!(
                fall[k].clone() * size(all.len()),
                fa[k].clone() * size(left.len()) + fb[k].clone() * size(right.len())
            );
        }
    }

    #[test]
    fn integer_verification_is_integer_equality(x in -5000i64..5000, y in -5000i64..5000) {
        let v = verify(Some(&x.to_string()), &y.to_string(), AnswerKind::Integer);
        prop_assert_eq!(v == Verdict::Correct, x == y);
    }
}

fn nested(depth: u32) -> BoxedStrategy<String> {
    let leaf = "[a-z0-9+^ ]{0,4}".boxed();
    if depth == 0 {
        return leaf;
    }
    prop::collection::vec(prop_oneof![3 => leaf.clone(), 1 => nested(depth - 1).prop_map(|s| format!("{{{s}}}"))], 0..4)
        .prop_map(|parts| parts.concat())
        .boxed()
}

/// Tries every closing brace after the last `\boxed{` and keeps the first
/// one that closes a balanced group.
fn oracle_boxed(s: &str) -> Option<&str> {
    let start = s.rfind("\\boxed{")? + 7;
    let body = &s[start..];
    (0..body.len()).filter(|&i| body.as_bytes()[i] == b'}').map(|i| &body[..i]).find(|c| {
        let mut depth = 0i32;
        c.chars().all(|ch| {
            depth += (ch == '{') as i32 - (ch == '}') as i32;
            depth >= 0
        }) && depth == 0
    })
}

fn chain_with_text(t: &str) -> Chain {
    Chain {
        task_id: "x".into(),
        benchmark: Benchmark::Custom,
        chain_index: 0,
        rounds: vec![RoundResponse {
            round: 1,
            prompt_used: "Q".into(),
            raw: t.into(),
            thinking: t.into(),
            answer: format!("but {t}"),
            extracted: None,
            completion_tokens: 0,
            token_source: TokenSource::ApiUsage,
            verdict: Verdict::Incorrect,
            truncated: false,
        }],
    }
}

/// Last integer in `text` that is not glued to a word or decimal point,
/// found by walking the characters once.
fn hand_scan_integer(text: &str) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    let word = |c: char| c.is_ascii_alphanumeric() || c == '_';
    let mut found = None;
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        let mut digits = String::new();
        while i < chars.len() && chars[i].is_ascii_digit() {
            digits.push(chars[i]);
            i += 1;
        }
        if digits.len() <= 3 {
            while i + 3 < chars.len() && chars[i] == ',' && chars[i + 1..i + 4].iter().all(|c| c.is_ascii_digit())
                && !(i + 4 < chars.len() && chars[i + 4].is_ascii_digit())
            {
                digits.extend(&chars[i + 1..i + 4]);
                i += 4;
            }
        }
        let prev = if start > 0 { Some(chars[start - 1]) } else { None };
        let next = chars.get(i).copied();
        if prev.is_some_and(|c| word(c) || c == '.') {
            continue;
        }
        if next.is_some_and(word) || (next == Some('.') && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())) {
            continue;
        }
        let negative = prev == Some('-') && (start < 2 || !(word(chars[start - 2]) || chars[start - 2] == '.'));
        let value: i128 = digits.parse().ok()?;
        found = Some(if negative { -value } else { value }.to_string());
    }
    found
}

#[test]
fn integer_fixture_corpus() {
    let mut cases = 0;
    for line in include_str!("fixtures/integer_answers.jsonl").lines() {
        let case: serde_json::Value = serde_json::from_str(line).unwrap();
        let text = case["text"].as_str().unwrap();
        let expected = case["expected"].as_str();
        let got = extract_final_answer(text, AnswerKind::Integer);
        assert_eq!(got.as_deref(), expected, "fixture {text:?}");
        if !text.contains("\\boxed{") {
            assert_eq!(hand_scan_integer(text).as_deref(), expected, "oracle on {text:?}");
        }
        cases += 1;
    }
    assert_eq!(cases, 50);
}

#[test]
fn expression_verification_is_symmetric() {
    let pool = [
        "\\frac{3}{4}", "0.75", "3/4", "\\dfrac{6}{8}", "\\sqrt{2}", "1.41421356", "2\\sqrt{2}", "\\sqrt{8}", "\\pi", "3.14159265",
        "\\frac{\\pi}{2}", "1.5707963", "x+1", "1+x", "\\text{(A)}", "12", "12.0", "1,000", "-\\frac{1}{3}", "\\frac{-1}{3}",
    ];
    for a in pool {
        for b in pool {
            assert_eq!(
                verify(Some(a), b, AnswerKind::Expression),
                verify(Some(b), a, AnswerKind::Expression),
                "asymmetric on {a:?} vs {b:?}"
            );
        }
    }
    assert_eq!(verify(Some("\\dfrac{6}{8}"), "0.75", AnswerKind::Expression), Verdict::Correct);
    assert_eq!(verify(Some("\\sqrt{8}"), "2\\sqrt{2}", AnswerKind::Expression), Verdict::Correct);
    assert_eq!(verify(Some("0.7500001"), "0.75", AnswerKind::Expression), Verdict::Correct);
    assert_eq!(verify(Some("0.751"), "0.75", AnswerKind::Expression), Verdict::Incorrect);
}

#[tokio::test]
async fn sft_rounds_used_follows_geometric_law() {
    use rethink_core::sft::generate_dataset;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sft.jsonl");
    let (p1, t_ic) = (0.3, 0.4);
    let tasks = common::integer_tasks(3000);
    let backend = common::CountingBackend::new(MockModelSpec::new(p1, 0.5, t_ic, 31).unwrap());
    let p = common::params(1, 4);
    let summary = generate_dataset(&tasks, |_| p.clone(), &backend, &Verifier::default(), 4, 32, &out).await.unwrap();
    let n = tasks.len() as f64;
    for r in 1..=4u32 {
        let expected = if r == 1 { p1 } else { (1.0 - p1) * (1.0 - t_ic).powi(r as i32 - 2) * t_ic };
        let got = *summary.by_rounds_used.get(&r).unwrap_or(&0) as f64 / n;
        let sigma = (expected * (1.0 - expected) / n).sqrt();
        assert!((got - expected).abs() <= 4.0 * sigma, "rounds_used={r}: {got} vs {expected}");
    }
    assert!(summary.by_rounds_used.keys().all(|r| *r <= 4));

    // A second invocation reuses every record and appends nothing.
    let before = std::fs::read(&out).unwrap();
    let again = generate_dataset(&tasks, |_| p.clone(), &backend, &Verifier::default(), 4, 32, &out).await.unwrap();
    assert_eq!(again.reused, summary.emitted);
    assert_eq!(again.emitted, 0);
    assert_eq!(std::fs::read(&out).unwrap(), before);
}
