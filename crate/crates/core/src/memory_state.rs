//! The two append-only memory queues: global evidence (summaries aimed at the
//! overarching question) and local pathway (sub-questions with their answers).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::text::normalize_question;

/// Stored as the answer of a local pathway entry the summarizer could not answer.
pub const NO_ANSWER: &str = "no answer found";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalEvidenceEntry {
    pub round: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalPathwayEntry {
    pub round: usize,
    pub sub_question: String,
    pub answer: String,
    pub answered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("global evidence summary is empty")]
    EmptySummary,
    #[error("local pathway entries start at round 1 (round 0 retrieves the question itself)")]
    LocalAtRoundZero,
    #[error("sub-question is empty")]
    EmptySubQuestion,
    #[error("unanswered sub-question must carry the `{NO_ANSWER}` marker")]
    UnansweredWithText,
    #[error("round {given} is not after the last stored round {last}")]
    RoundNotIncreasing { given: usize, last: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    global_evidence: Vec<GlobalEvidenceEntry>,
    local_pathway: Vec<LocalPathwayEntry>,
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn global_evidence(&self) -> &[GlobalEvidenceEntry] {
        &self.global_evidence
    }

    pub fn local_pathway(&self) -> &[LocalPathwayEntry] {
        &self.local_pathway
    }

    pub fn push_global(&mut self, round: usize, summary: &str) -> Result<(), MemoryError> {
        if summary.trim().is_empty() {
            return Err(MemoryError::EmptySummary);
        }
        if let Some(last) = self.global_evidence.last() {
            if round <= last.round {
                return Err(MemoryError::RoundNotIncreasing { given: round, last: last.round });
            }
        }
        self.global_evidence.push(GlobalEvidenceEntry {
            round,
            text: summary.to_owned(),
        });
        Ok(())
    }

    pub fn push_local(&mut self, round: usize, sub_question: &str, answer: &str, answered: bool) -> Result<(), MemoryError> {
        if round == 0 {
            return Err(MemoryError::LocalAtRoundZero);
        }
        if sub_question.trim().is_empty() {
            return Err(MemoryError::EmptySubQuestion);
        }
        if !answered && answer != NO_ANSWER {
            return Err(MemoryError::UnansweredWithText);
        }
        if let Some(last) = self.local_pathway.last() {
            if round <= last.round {
                return Err(MemoryError::RoundNotIncreasing { given: round, last: last.round });
            }
        }
        self.local_pathway.push(LocalPathwayEntry {
            round,
            sub_question: sub_question.to_owned(),
            answer: answer.to_owned(),
            answered,
        });
        Ok(())
    }

    /// Both queues as prompt context: evidence first, then the retrieval
    /// history, each in round order.
    pub fn render_combined(&self) -> String {
        let mut lines = vec!["Global evidence:".to_owned()];
        if self.global_evidence.is_empty() {
            lines.push("(none)".into());
        }
        lines.extend(self.global_evidence.iter().map(|e| e.text.clone()));
        lines.push("Retrieval history:".into());
        if self.local_pathway.is_empty() {
            lines.push("(none)".into());
        }
        lines.extend(
            self.local_pathway
                .iter()
                .map(|e| format!("Q: {} A: {}", e.sub_question, e.answer)),
        );
        lines.join("\n")
    }

    /// Normalized sub-questions already retrieved, plus the overarching
    /// question when given (it is what round 0 retrieves).
    pub fn seen_subquestions(&self, overarching_question: Option<&str>) -> BTreeSet<String> {
        self.local_pathway
            .iter()
            .map(|e| e.sub_question.as_str())
            .chain(overarching_question)
            .map(normalize_question)
            .collect()
    }
}
