//! Prompt templates with named slots and cap-aware assembly.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus_index::RetrievedDocument;
use crate::llm_gateway::TokenEstimator;

pub const JUDGE_TEMPLATE: &str = "Judging based solely on the current known information and without allowing for inference, are you able to completely and accurately respond to the question {overarching_question}? \nKnown information: {memory}. \nIf you can, please reply with 'Yes' directly; if you cannot and need more information, please reply with 'No' directly.";

pub const PLAN_TEMPLATE: &str = "You serve as an intelligent assistant, adept at facilitating users through complex, multi-hop reasoning across multiple documents. Please understand the information gap between the currently known information and the target problem.Your task is to generate one thought in the form of question for next retrieval step directly. DON\\'T generate the whole thoughts at once!\n DON\\'T generate thought which has been retrieved.\n [Known information]: {memory}\n[Target question]: {overarching_question}\n[You Thought]:";

pub const GLOBAL_EVIDENCE_TEMPLATE: &str = "Passages: {docs}\nYour job is to act as a professional writer. You will write a good-quality passage that can support the given prediction about the question only based on the information in the provided supporting passages. Now, let's start. After you write, please write [DONE] to indicate you are done. Do not write a prefix (e.g., 'Response:') while writing a passage.\nQuestion:{overarching_question}\nPassage:";

pub const LOCAL_PATHWAY_TEMPLATE: &str = "Judging based solely on the current known information and without allowing for inference, are you able to respond completely and accurately to the question {sub_question}? \nKnown information: {memory}. If yes, please reply with 'Yes', followed by an accurate response to the question {sub_question}, without restating the question; if no, please reply with 'No' directly.";

pub const GENERATE_TEMPLATE: &str = "Answer the question based on the given reference.\nOnly give me the answer and do not output any other words.\nThe following are given reference: {memory}\nQuestion: {overarching_question}";

/// The generator prompt with raw retrieved documents in place of memory,
/// used by the single-round baseline.
pub const STANDARD_GENERATE_TEMPLATE: &str = "Answer the question based on the given reference.\nOnly give me the answer and do not output any other words.\nThe following are given reference: {docs}\nQuestion: {overarching_question}";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    OverarchingQuestion,
    SubQuestion,
    Memory,
    Docs,
}

impl Slot {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "overarching_question" => Slot::OverarchingQuestion,
            "sub_question" => Slot::SubQuestion,
            "memory" => Slot::Memory,
            "docs" => Slot::Docs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::OverarchingQuestion => "overarching_question",
            Slot::SubQuestion => "sub_question",
            Slot::Memory => "memory",
            Slot::Docs => "docs",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("template `{template}` uses unknown slot `{{{slot}}}`")]
    UnknownSlot { template: String, slot: String },
    #[error("template `{template}` needs slot `{slot}` but it was not bound")]
    UnboundSlot { template: String, slot: Slot },
    #[error("`{template}` prompt is {estimated} estimated tokens with {docs_kept} document(s), over the {cap}-token input cap")]
    OverCap {
        template: String,
        estimated: usize,
        cap: usize,
        docs_kept: usize,
    },
    #[error("cannot read template `{path}`: {message}")]
    Io { path: PathBuf, message: String },
}

/// A template parsed into literal text and `{slot}` references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    /// Parses `{name}` references. Braces that do not enclose an identifier
    /// are literal text; an identifier that is not a known slot is an error.
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let ident_len = after
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(after.len());
            if ident_len > 0 && after[ident_len..].starts_with('}') {
                let ident = &after[..ident_len];
                let slot = Slot::from_name(ident).ok_or_else(|| PromptError::UnknownSlot {
                    template: name.to_owned(),
                    slot: ident.to_owned(),
                })?;
                if !literal.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Slot(slot));
                rest = &after[ident_len + 1..];
            } else {
                literal.push('{');
                rest = after;
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        Ok(Self {
            name: name.to_owned(),
            pieces,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(*s),
            Piece::Text(_) => None,
        })
    }

    pub fn uses(&self, slot: Slot) -> bool {
        self.slots().any(|s| s == slot)
    }

    /// Same template with literal text appended.
    pub fn with_suffix(&self, suffix: &str) -> Self {
        let mut out = self.clone();
        out.pieces.push(Piece::Text(suffix.to_owned()));
        out
    }

    fn render(&self, bindings: &SlotBindings<'_>, docs_text: &str) -> Result<String, PromptError> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(Slot::Docs) => {
                    if bindings.docs.is_none() {
                        return Err(self.unbound(Slot::Docs));
                    }
                    out.push_str(docs_text);
                }
                Piece::Slot(slot) => {
                    let value = match slot {
                        Slot::OverarchingQuestion => bindings.overarching_question,
                        Slot::SubQuestion => bindings.sub_question,
                        Slot::Memory => bindings.memory,
                        Slot::Docs => unreachable!(),
                    };
                    out.push_str(value.ok_or_else(|| self.unbound(*slot))?);
                }
            }
        }
        Ok(out)
    }

    fn unbound(&self, slot: Slot) -> PromptError {
        PromptError::UnboundSlot {
            template: self.name.clone(),
            slot,
        }
    }
}

/// Values for a template's slots. Documents stay structured so assembly can
/// drop them one at a time.
#[derive(Debug, Clone, Copy, Default)]
pub struct SlotBindings<'a> {
    pub overarching_question: Option<&'a str>,
    pub sub_question: Option<&'a str>,
    pub memory: Option<&'a str>,
    pub docs: Option<&'a [RetrievedDocument]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub estimated_tokens: usize,
    /// Documents that made it into the prompt; `None` when the template has
    /// no `docs` slot.
    pub docs_included: Option<usize>,
    pub docs_dropped: usize,
}

/// Title line (when present) and body, documents separated by blank lines.
pub fn format_docs(docs: &[RetrievedDocument]) -> String {
    docs.iter()
        .map(|d| {
            if d.title.is_empty() {
                d.text.clone()
            } else {
                format!("{}\n{}", d.title, d.text)
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Fills every slot and enforces the input cap. Over the cap, documents are
/// dropped from the lowest rank upward; every other slot is kept whole. If
/// the prompt is still too long with only the top document, that is an error.
pub fn assemble_prompt(
    template: &PromptTemplate,
    bindings: &SlotBindings<'_>,
    max_input_tokens: usize,
    estimator: &dyn TokenEstimator,
) -> Result<AssembledPrompt, PromptError> {
    let docs = bindings.docs.unwrap_or(&[]);
    let uses_docs = template.uses(Slot::Docs);
    let render_with = |n: usize| -> Result<(String, usize), PromptError> {
        let text = template.render(bindings, &format_docs(&docs[..n]))?;
        let est = estimator.estimate(&text);
        Ok((text, est))
    };

    let (text, est) = render_with(docs.len())?;
    if est <= max_input_tokens {
        return Ok(AssembledPrompt {
            text,
            estimated_tokens: est,
            docs_included: uses_docs.then_some(docs.len()),
            docs_dropped: 0,
        });
    }
    if !uses_docs || docs.len() <= 1 {
        return Err(PromptError::OverCap {
            template: template.name.clone(),
            estimated: est,
            cap: max_input_tokens,
            docs_kept: if uses_docs { docs.len() } else { 0 },
        });
    }

    // Largest n in [1, len) that fits; the estimate only grows with n.
    let (mut lo, mut hi) = (1usize, docs.len() - 1);
    let (first_text, first_est) = render_with(1)?;
    if first_est > max_input_tokens {
        return Err(PromptError::OverCap {
            template: template.name.clone(),
            estimated: first_est,
            cap: max_input_tokens,
            docs_kept: 1,
        });
    }
    let mut best = (first_text, first_est);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        let (t, e) = render_with(mid)?;
        if e <= max_input_tokens {
            lo = mid;
            best = (t, e);
        } else {
            hi = mid - 1;
        }
    }
    Ok(AssembledPrompt {
        text: best.0,
        estimated_tokens: best.1,
        docs_included: Some(lo),
        docs_dropped: docs.len() - lo,
    })
}

/// All prompts the pipeline issues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    pub judge: PromptTemplate,
    pub plan: PromptTemplate,
    pub global_evidence: PromptTemplate,
    pub local_pathway: PromptTemplate,
    pub generate: PromptTemplate,
    pub standard_generate: PromptTemplate,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        let parse = |name, text| PromptTemplate::parse(name, text).expect("built-in template parses");
        Self {
            judge: parse("judge", JUDGE_TEMPLATE),
            plan: parse("plan", PLAN_TEMPLATE),
            global_evidence: parse("global_evidence", GLOBAL_EVIDENCE_TEMPLATE),
            local_pathway: parse("local_pathway", LOCAL_PATHWAY_TEMPLATE),
            generate: parse("generate", GENERATE_TEMPLATE),
            standard_generate: parse("standard_generate", STANDARD_GENERATE_TEMPLATE),
        }
    }
}

impl PromptTemplateSet {
    /// Loads overrides from `<dir>/<name>.txt`; templates without a file keep
    /// their built-in text.
    pub fn load_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        let slots: [(&str, &mut PromptTemplate); 6] = [
            ("judge", &mut set.judge),
            ("plan", &mut set.plan),
            ("global_evidence", &mut set.global_evidence),
            ("local_pathway", &mut set.local_pathway),
            ("generate", &mut set.generate),
            ("standard_generate", &mut set.standard_generate),
        ];
        if !dir.is_dir() {
            return Err(PromptError::Io {
                path: dir.to_owned(),
                message: "not a directory".into(),
            });
        }
        for (name, template) in slots {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            *template = PromptTemplate::parse(name, &text)?;
        }
        Ok(set)
    }
}
