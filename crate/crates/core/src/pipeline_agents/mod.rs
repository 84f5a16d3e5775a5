//! The LLM-backed roles: dual-function summarizer, reasoner (judge and
//! plan) and generator. Each operation is prompt assembly, one gateway call
//! and a strict parse.

mod parse;
mod templates;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use parse::{parse_judgement, parse_local_answer, parse_plan, parse_summary, Judgement, LocalAnswer, EMPTY_SUMMARY};
pub use templates::{
    assemble_prompt, format_docs, AssembledPrompt, PromptError, PromptTemplate, PromptTemplateSet, Slot, SlotBindings,
    GENERATE_TEMPLATE, GLOBAL_EVIDENCE_TEMPLATE, JUDGE_TEMPLATE, LOCAL_PATHWAY_TEMPLATE, PLAN_TEMPLATE,
    STANDARD_GENERATE_TEMPLATE,
};

use crate::corpus_index::RetrievedDocument;
use crate::llm_gateway::{Gateway, LlmError, LlmRequest, RoleTag};
use crate::memory_state::MemoryState;
use crate::text::normalize_question;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    SummarizeGlobal,
    AnswerLocal,
    Judge,
    Plan,
    Generate,
}

/// One LLM call as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCall {
    pub kind: CallKind,
    pub role: RoleTag,
    pub backend_id: String,
    pub prompt_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docs_in_prompt: Option<usize>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub docs_dropped: usize,
    pub response: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// Collects the calls and parse anomalies of one loop round.
#[derive(Debug, Clone, Default)]
pub struct CallLog {
    pub round: usize,
    pub log_prompts: bool,
    pub calls: Vec<LlmCall>,
    pub anomalies: Vec<String>,
}

impl CallLog {
    pub fn new(round: usize, log_prompts: bool) -> Self {
        Self {
            round,
            log_prompts,
            ..Default::default()
        }
    }

    fn anomaly(&mut self, message: String) {
        tracing::debug!(round = self.round, "{message}");
        self.anomalies.push(format!("round {}: {message}", self.round));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanResult {
    pub sub_question: String,
    pub attempts: usize,
    pub forced_termination: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("round {round}: {source}")]
    Prompt {
        round: usize,
        #[source]
        source: PromptError,
    },
}

/// Limits and sampling settings shared by all agent calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub max_input_tokens: usize,
    pub max_output_tokens: usize,
    pub reasoner_temperature: f64,
    pub summarizer_temperature: f64,
    pub generator_temperature: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            max_input_tokens: 12_000,
            max_output_tokens: 200,
            reasoner_temperature: 0.0,
            summarizer_temperature: 0.0,
            generator_temperature: 0.0,
        }
    }
}

impl AgentSettings {
    fn temperature(&self, role: RoleTag) -> f64 {
        match role {
            RoleTag::Reasoner => self.reasoner_temperature,
            RoleTag::Summarizer => self.summarizer_temperature,
            RoleTag::Generator => self.generator_temperature,
        }
    }
}

pub struct Agents<'a> {
    gateway: &'a Gateway,
    templates: &'a PromptTemplateSet,
    settings: AgentSettings,
}

impl<'a> Agents<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a PromptTemplateSet, settings: AgentSettings) -> Self {
        Self {
            gateway,
            templates,
            settings,
        }
    }

    pub fn assemble(&self, template: &PromptTemplate, bindings: &SlotBindings<'_>, round: usize) -> Result<AssembledPrompt, AgentError> {
        assemble_prompt(
            template,
            bindings,
            self.settings.max_input_tokens,
            self.gateway.estimator().as_ref(),
        )
        .map_err(|source| AgentError::Prompt { round, source })
    }

    fn call(&self, kind: CallKind, role: RoleTag, prompt: AssembledPrompt, log: &mut CallLog) -> Result<String, AgentError> {
        let request = LlmRequest {
            prompt: prompt.text,
            max_output_tokens: self.settings.max_output_tokens,
            temperature: self.settings.temperature(role),
            role,
        };
        let response = self.gateway.complete(&request, log.round)?;
        log.calls.push(LlmCall {
            kind,
            role,
            backend_id: response.backend_id,
            prompt_tokens: prompt.estimated_tokens,
            docs_in_prompt: prompt.docs_included,
            docs_dropped: prompt.docs_dropped,
            response: response.text.clone(),
            latency_ms: response.latency.as_millis() as u64,
            prompt: log.log_prompts.then_some(request.prompt),
        });
        Ok(response.text)
    }

    /// Query-focused summary of `docs` for the overarching question. An empty
    /// hit list short-circuits to the sentinel summary without a model call.
    pub fn summarize_global(&self, docs: &[RetrievedDocument], overarching_question: &str, log: &mut CallLog) -> Result<String, AgentError> {
        if docs.is_empty() {
            return Ok(EMPTY_SUMMARY.to_owned());
        }
        let prompt = self.assemble(
            &self.templates.global_evidence,
            &SlotBindings {
                overarching_question: Some(overarching_question),
                docs: Some(docs),
                ..Default::default()
            },
            log.round,
        )?;
        let raw = self.call(CallKind::SummarizeGlobal, RoleTag::Summarizer, prompt, log)?;
        Ok(parse_summary(&raw))
    }

    /// Answers the current sub-question from the combined memory. The
    /// round's global summary must already be in `memory`.
    pub fn answer_local(&self, sub_question: &str, memory: &MemoryState, log: &mut CallLog) -> Result<LocalAnswer, AgentError> {
        let rendered = memory.render_combined();
        let prompt = self.assemble(
            &self.templates.local_pathway,
            &SlotBindings {
                sub_question: Some(sub_question),
                memory: Some(&rendered),
                ..Default::default()
            },
            log.round,
        )?;
        let raw = self.call(CallKind::AnswerLocal, RoleTag::Summarizer, prompt, log)?;
        let (answer, anomaly) = parse_local_answer(&raw);
        if let Some(a) = anomaly {
            log.anomaly(a);
        }
        Ok(answer)
    }

    pub fn judge(&self, overarching_question: &str, memory: &MemoryState, log: &mut CallLog) -> Result<Judgement, AgentError> {
        let rendered = memory.render_combined();
        let prompt = self.assemble(
            &self.templates.judge,
            &SlotBindings {
                overarching_question: Some(overarching_question),
                memory: Some(&rendered),
                ..Default::default()
            },
            log.round,
        )?;
        let raw = self.call(CallKind::Judge, RoleTag::Reasoner, prompt, log)?;
        let (judgement, anomaly) = parse_judgement(&raw);
        if let Some(a) = anomaly {
            log.anomaly(a);
        }
        Ok(judgement)
    }

    /// Proposes the next sub-question. A proposal whose normalized form is in
    /// `forbidden` (or that is empty) earns one retry with the forbidden list
    /// spelled out; a second miss sets `forced_termination`.
    pub fn plan(&self, overarching_question: &str, memory: &MemoryState, forbidden: &BTreeSet<String>, log: &mut CallLog) -> Result<PlanResult, AgentError> {
        let rendered = memory.render_combined();
        let bindings = SlotBindings {
            overarching_question: Some(overarching_question),
            memory: Some(&rendered),
            ..Default::default()
        };
        let retry_template = self.templates.plan.with_suffix(&format!(
            "\nDo not repeat any of these questions: {}",
            forbidden.iter().map(String::as_str).collect::<Vec<_>>().join("; ")
        ));

        let mut last = String::new();
        for (attempt, template) in [&self.templates.plan, &retry_template].into_iter().enumerate() {
            let prompt = self.assemble(template, &bindings, log.round)?;
            let raw = self.call(CallKind::Plan, RoleTag::Reasoner, prompt, log)?;
            match parse_plan(&raw) {
                Some(q) if !forbidden.contains(&normalize_question(&q)) => {
                    return Ok(PlanResult {
                        sub_question: q,
                        attempts: attempt + 1,
                        forced_termination: false,
                    });
                }
                Some(q) => {
                    log.anomaly(format!("plan attempt {} repeated a retrieved sub-question: {q:?}", attempt + 1));
                    last = q;
                }
                None => log.anomaly(format!("plan attempt {} produced no question: {raw:?}", attempt + 1)),
            }
        }
        Ok(PlanResult {
            sub_question: last,
            attempts: 2,
            forced_termination: true,
        })
    }

    pub fn generate(&self, overarching_question: &str, memory: &MemoryState, log: &mut CallLog) -> Result<String, AgentError> {
        let rendered = memory.render_combined();
        let prompt = self.assemble(
            &self.templates.generate,
            &SlotBindings {
                overarching_question: Some(overarching_question),
                memory: Some(&rendered),
                ..Default::default()
            },
            log.round,
        )?;
        let raw = self.call(CallKind::Generate, RoleTag::Generator, prompt, log)?;
        Ok(raw.trim().to_owned())
    }

    /// Single-round baseline: answer straight from the retrieved documents.
    pub fn generate_from_docs(&self, overarching_question: &str, docs: &[RetrievedDocument], log: &mut CallLog) -> Result<String, AgentError> {
        let prompt = self.assemble(
            &self.templates.standard_generate,
            &SlotBindings {
                overarching_question: Some(overarching_question),
                docs: Some(docs),
                ..Default::default()
            },
            log.round,
        )?;
        let raw = self.call(CallKind::Generate, RoleTag::Generator, prompt, log)?;
        Ok(raw.trim().to_owned())
    }
}
