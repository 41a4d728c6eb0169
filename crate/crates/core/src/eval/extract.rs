//! Answer extraction from free-form model responses.
//!
//! Scores are only comparable between runs that used the same policy, so the
//! rules below are versioned by [`EXTRACTION_POLICY`].
//!
//! * labelled tasks: the last "answer is X" whose X is a choice label, else
//!   the last standalone occurrence of any label (case-insensitive);
//! * numeric tasks: the last number in the response;
//! * open-ended tasks: the whole response.

use std::sync::LazyLock;

use regex::Regex;

use super::task::{AnswerKind, Instance, Task};

pub const EXTRACTION_POLICY: &str = "v1";

static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("number regex"));

static ANSWER_IS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\banswer\s*(?:is|:)").expect("answer regex"));

/// Normalizes a numeric string: commas dropped, then printed as the shortest
/// float representation ("1,000.0" becomes "1000").
pub fn canonical_number(s: &str) -> Option<String> {
    let cleaned: String = s.trim().chars().filter(|&c| c != ',').collect();
    let value: f64 = cleaned.parse().ok()?;
    value.is_finite().then(|| {
        if value == 0.0 {
            "0".to_string()
        } else {
            format!("{value}")
        }
    })
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte offsets in `haystack` where `needle` occurs as a standalone token.
fn token_matches(haystack: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    haystack
        .match_indices(needle)
        .filter(|(start, _)| {
            let before = haystack[..*start].chars().next_back();
            let after = haystack[start + needle.len()..].chars().next();
            !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
        })
        .map(|(start, _)| start)
        .collect()
}

fn extract_label<'a>(response: &str, labels: &[&'a str]) -> Option<&'a str> {
    let lowered = response.to_lowercase();
    let lowered_labels: Vec<String> = labels.iter().map(|l| l.to_lowercase()).collect();

    // "answer is X": take the label that starts right after the phrase,
    // skipping spaces, brackets, quotes and colons.
    let mut from_pattern = None;
    for m in ANSWER_IS_RE.find_iter(&lowered) {
        let rest = &lowered[m.end()..];
        let trimmed = rest.trim_start_matches(|c: char| c.is_whitespace() || "([{\"'*:".contains(c));
        let offset = m.end() + (rest.len() - trimmed.len());
        let hit = lowered_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| token_matches(&lowered[offset..], l).first() == Some(&0))
            .max_by_key(|(_, l)| l.len());
        if let Some((i, _)) = hit {
            from_pattern = Some(labels[i]);
        }
    }
    if from_pattern.is_some() {
        return from_pattern;
    }

    // Last standalone occurrence by end offset; on a shared end the longer
    // label wins ("not sarcastic" over "sarcastic").
    lowered_labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            token_matches(&lowered, l)
                .last()
                .map(|&pos| (pos + l.len(), l.len(), i))
        })
        .max()
        .map(|(_, _, i)| labels[i])
}

pub fn extract_answer(response: &str, task: &Task, instance: &Instance) -> Option<String> {
    match task.answer_kind {
        AnswerKind::MultipleChoice | AnswerKind::Classification => {
            let labels: Vec<&str> = instance.labels().collect();
            extract_label(response, &labels).map(str::to_string)
        }
        AnswerKind::Numeric => NUMBER_RE
            .find_iter(response)
            .filter_map(|m| canonical_number(m.as_str()))
            .last(),
        AnswerKind::OpenEnded => (!response.trim().is_empty()).then(|| response.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::task::{Choice, Metric};

    fn task(kind: AnswerKind) -> Task {
        Task {
            id: "t".into(),
            name: "t".into(),
            domain_tags: Default::default(),
            metric: Metric::Accuracy,
            answer_kind: kind,
            simple_task_prompt: "Answer.".into(),
            instances: Vec::new(),
        }
    }

    fn instance(labels: &[&str]) -> Instance {
        Instance {
            id: "i".into(),
            input: "q".into(),
            choices: Some(
                labels
                    .iter()
                    .map(|l| Choice {
                        label: l.to_string(),
                        text: None,
                    })
                    .collect(),
            ),
            gold: Some(labels[0].into()),
            correct_refs: None,
            incorrect_refs: None,
            split: None,
        }
    }

    fn mc(response: &str, labels: &[&str]) -> Option<String> {
        extract_answer(response, &task(AnswerKind::MultipleChoice), &instance(labels))
    }

    #[test]
    fn spec_examples() {
        assert_eq!(mc("The answer is (B).", &["A", "B", "C", "D"]).as_deref(), Some("B"));
        assert_eq!(mc("I think A, but actually B", &["A", "B", "C", "D"]).as_deref(), Some("B"));
        assert_eq!(mc("no idea", &["A", "B"]), None);
    }

    #[test]
    fn pattern_beats_later_stray_tokens() {
        // The article "a" after the pattern would otherwise match label A.
        assert_eq!(
            mc("The answer is (C) because a triangle has three sides.", &["A", "B", "C", "D"]).as_deref(),
            Some("C")
        );
        assert_eq!(mc("Answer: d", &["A", "B", "C", "D"]).as_deref(), Some("D"));
    }

    #[test]
    fn classification_labels_are_whole_words() {
        let labels = ["sarcastic", "not sarcastic"];
        assert_eq!(
            mc("This is not sarcastic.", &labels).as_deref(),
            Some("not sarcastic"),
            "longer label wins at a shared end"
        );
        assert_eq!(mc("Clearly SARCASTIC!", &labels).as_deref(), Some("sarcastic"));
        assert_eq!(mc("unsarcastically", &labels), None);
        assert_eq!(mc("The answer is: yes", &["yes", "no"]).as_deref(), Some("yes"));
    }

    #[test]
    fn numbers() {
        let t = task(AnswerKind::Numeric);
        let i = instance(&["x"]);
        assert_eq!(extract_answer("7 * 8 = 56", &t, &i).as_deref(), Some("56"));
        assert_eq!(extract_answer("It costs 1,000.50 dollars", &t, &i).as_deref(), Some("1000.5"));
        assert_eq!(extract_answer("-3 degrees", &t, &i).as_deref(), Some("-3"));
        assert_eq!(extract_answer("none", &t, &i), None);
        assert_eq!(canonical_number("56.0").as_deref(), Some("56"));
        assert_eq!(canonical_number("-0").as_deref(), Some("0"));
        assert_eq!(canonical_number("abc"), None);
    }

    #[test]
    fn open_ended_is_verbatim() {
        let t = task(AnswerKind::OpenEnded);
        let i = instance(&["x"]);
        assert_eq!(extract_answer(" The sky. ", &t, &i).as_deref(), Some(" The sky. "));
        assert_eq!(extract_answer("   ", &t, &i), None);
    }
}
