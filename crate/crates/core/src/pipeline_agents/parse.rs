//! Total parsers for model output. Every input maps to a defined value;
//! surprises are reported as anomaly strings instead of errors.

use serde::{Deserialize, Serialize};

use crate::memory_state::NO_ANSWER;

/// Returned when the summarizer finds nothing worth keeping.
pub const EMPTY_SUMMARY: &str = "No relevant information found.";

const DONE_MARKER: &str = "[DONE]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub sufficient: bool,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalAnswer {
    pub answered: bool,
    pub answer: String,
}

impl LocalAnswer {
    pub fn unanswered() -> Self {
        Self {
            answered: false,
            answer: NO_ANSWER.to_owned(),
        }
    }
}

fn surface(raw: &str) -> &str {
    raw.trim().trim_start_matches(['"', '\'', '*', '\u{201c}', '\u{2018}'])
}

fn starts_with_ci(s: &str, prefix: &str) -> bool {
    s.get(..prefix.len()).is_some_and(|p| p.eq_ignore_ascii_case(prefix))
}

pub fn parse_judgement(raw: &str) -> (Judgement, Option<String>) {
    let s = surface(raw);
    let sufficient = starts_with_ci(s, "yes");
    let anomaly = (!sufficient && !starts_with_ci(s, "no")).then(|| format!("judge reply is neither Yes nor No: {raw:?}"));
    (
        Judgement {
            sufficient,
            raw_text: raw.to_owned(),
        },
        anomaly,
    )
}

pub fn parse_local_answer(raw: &str) -> (LocalAnswer, Option<String>) {
    let s = surface(raw);
    if starts_with_ci(s, "yes") {
        let answer = s[3..]
            .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | ':' | ';' | '!' | '-'))
            .trim_end();
        if answer.is_empty() {
            return (
                LocalAnswer::unanswered(),
                Some(format!("local answer said Yes without an answer: {raw:?}")),
            );
        }
        return (
            LocalAnswer {
                answered: true,
                answer: answer.to_owned(),
            },
            None,
        );
    }
    let anomaly = (!starts_with_ci(s, "no")).then(|| format!("local answer is neither Yes nor No: {raw:?}"));
    (LocalAnswer::unanswered(), anomaly)
}

/// Text before the first `[DONE]`, trimmed; the fixed sentinel when nothing
/// is left.
pub fn parse_summary(raw: &str) -> String {
    let body = raw.split(DONE_MARKER).next().unwrap_or_default().trim();
    if body.is_empty() {
        EMPTY_SUMMARY.to_owned()
    } else {
        body.to_owned()
    }
}

const PLAN_PREFIXES: [&str; 3] = ["[You Thought]:", "Thought:", "Question:"];

/// First non-empty line with any `Thought:` / `Question:` label and
/// surrounding quotes removed. `None` when nothing usable remains.
pub fn parse_plan(raw: &str) -> Option<String> {
    let mut line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    'strip: loop {
        for prefix in PLAN_PREFIXES {
            if starts_with_ci(line, prefix) {
                line = line[prefix.len()..].trim_start();
                continue 'strip;
            }
        }
        break;
    }
    let q = line.trim_matches(|c| matches!(c, '"' | '\u{201c}' | '\u{201d}')).trim();
    (!q.is_empty()).then(|| q.to_owned())
}
