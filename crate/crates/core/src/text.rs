//! Text normalization shared by the index, the memory queues and the metrics.

use std::sync::OnceLock;

use regex::Regex;

/// Anything that is neither alphanumeric nor whitespace counts as punctuation.
pub fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn strip_punctuation(s: &str) -> String {
    s.chars().filter(|c| !is_punctuation(*c)).collect()
}

/// Lowercased tokens split on Unicode whitespace after punctuation is removed.
///
/// Punctuation is deleted rather than replaced, so `"murphy's"` becomes
/// `"murphys"`.
pub fn tokenize(text: &str) -> Vec<String> {
    strip_punctuation(&text.to_lowercase())
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"))
}

/// SQuAD-style answer normalization: lowercase, drop the articles
/// `a`/`an`/`the` as whole words, strip punctuation, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_articles = articles().replace_all(&lower, " ");
    let no_punct = strip_punctuation(&no_articles);
    no_punct.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical form used to decide whether two sub-questions are the same:
/// lowercased, whitespace collapsed, trailing punctuation removed.
pub fn normalize_question(s: &str) -> String {
    let collapsed = s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| is_punctuation(c) || c.is_whitespace())
        .to_owned()
}
