//! The retrieve → summarize → judge → plan loop, the single-round baseline,
//! and the top-k sweep built on top of them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus_index::{IndexError, RetrievedDocument, Retriever};
use crate::eval_harness::{evaluate, EvalSummary, QAExample};
use crate::llm_gateway::Gateway;
use crate::memory_state::{MemoryError, MemoryState};
use crate::pipeline_agents::{AgentError, AgentSettings, Agents, CallLog, Judgement, LlmCall, LocalAnswer, PlanResult, PromptTemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Resp,
    Standard,
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineKind::Resp => "resp",
            PipelineKind::Standard => "standard",
        })
    }
}

impl FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "resp" => Ok(PipelineKind::Resp),
            "standard" => Ok(PipelineKind::Standard),
            other => Err(format!("unknown pipeline `{other}` (expected `resp` or `standard`)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub top_k: usize,
    /// Retrieval rounds, counting round 0.
    pub max_iterations: usize,
    pub agents: AgentSettings,
    pub log_prompts: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            max_iterations: 3,
            agents: AgentSettings::default(),
            log_prompts: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |what: &str| Err(RunError::InvalidConfig(format!("{what} must be at least 1")));
        if self.top_k == 0 {
            return bad("top_k");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations");
        }
        if self.agents.max_input_tokens == 0 {
            return bad("max_input_tokens");
        }
        if self.agents.max_output_tokens == 0 {
            return bad("max_output_tokens");
        }
        let temps = [
            self.agents.reasoner_temperature,
            self.agents.summarizer_temperature,
            self.agents.generator_temperature,
        ];
        if temps.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(RunError::InvalidConfig("temperatures must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Generate,
    Continue,
    ForcedGenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    JudgedSufficient,
    MaxIterations,
    DuplicatePlan,
    /// The single-round baseline always stops after its one retrieval.
    SinglePass,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::JudgedSufficient => "judged_sufficient",
            StopReason::MaxIterations => "max_iterations",
            StopReason::DuplicatePlan => "duplicate_plan",
            StopReason::SinglePass => "single_pass",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub round: usize,
    pub sub_question: String,
    pub retrieved: Vec<RetrievedDocument>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_summary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_answer: Option<LocalAnswer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judgement: Option<Judgement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanResult>,
    pub decision: Decision,
    pub calls: Vec<LlmCall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub pipeline: PipelineKind,
    pub question: String,
    pub iterations: Vec<IterationRecord>,
    pub final_answer: String,
    pub stop_reason: StopReason,
    pub anomalies: Vec<String>,
    /// Estimated size of the final generator prompt.
    pub generator_prompt_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemoryState>,
}

impl RunTrace {
    pub fn rounds(&self) -> usize {
        self.iterations.len()
    }

    pub fn sub_questions(&self) -> impl Iterator<Item = &str> {
        self.iterations.iter().map(|r| r.sub_question.as_str())
    }

    pub fn calls(&self) -> impl Iterator<Item = &LlmCall> {
        self.iterations.iter().flat_map(|r| r.calls.iter())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("retrieval failed in round {round}: {message}")]
    Retrieval { round: usize, message: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("memory update failed in round {round}: {source}")]
    Memory {
        round: usize,
        #[source]
        source: MemoryError,
    },
}

/// Everything one question's run needs. Cheap to clone; clones share the
/// retriever and backends.
#[derive(Clone)]
pub struct Pipeline {
    retriever: Arc<dyn Retriever>,
    gateway: Gateway,
    templates: Arc<PromptTemplateSet>,
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(retriever: Arc<dyn Retriever>, gateway: Gateway, templates: PromptTemplateSet, config: PipelineConfig) -> Result<Self, RunError> {
        config.validate()?;
        Ok(Self {
            retriever,
            gateway,
            templates: Arc::new(templates),
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn with_config(&self, config: PipelineConfig) -> Result<Self, RunError> {
        config.validate()?;
        Ok(Self {
            config,
            ..self.clone()
        })
    }

    pub fn run(&self, kind: PipelineKind, question: &str) -> Result<RunTrace, RunError> {
        match kind {
            PipelineKind::Resp => self.run_resp(question),
            PipelineKind::Standard => self.run_standard_rag(question),
        }
    }

    fn retrieve(&self, query: &str, round: usize) -> Result<Vec<RetrievedDocument>, RunError> {
        self.retriever
            .retrieve(query, self.config.top_k)
            .map_err(|e: IndexError| RunError::Retrieval {
                round,
                message: e.to_string(),
            })
    }

    /// Runs the iterative loop for one question.
    ///
    /// Round 0 retrieves with the question itself and stores only a global
    /// summary. Every later round retrieves with the planned sub-question,
    /// stores a global summary and then a local answer. The judge runs after
    /// the memory update of every round. The loop ends when the judge is
    /// satisfied, when `max_iterations` retrievals have been made, or when
    /// the planner cannot produce a new sub-question; the generator then
    /// answers from memory.
    pub fn run_resp(&self, question: &str) -> Result<RunTrace, RunError> {
        if question.trim().is_empty() {
            return Err(RunError::EmptyQuestion);
        }
        let gateway = self.gateway.conversation();
        let agents = Agents::new(&gateway, &self.templates, self.config.agents);
        let mut memory = MemoryState::new();
        let mut iterations: Vec<IterationRecord> = Vec::new();
        let mut anomalies = Vec::new();
        let mut sub_question = question.to_owned();
        let mut stop_reason = StopReason::MaxIterations;

        for round in 0..self.config.max_iterations {
            let mut log = CallLog::new(round, self.config.log_prompts);
            let retrieved = self.retrieve(&sub_question, round)?;

            let summary = agents.summarize_global(&retrieved, question, &mut log)?;
            memory
                .push_global(round, &summary)
                .map_err(|source| RunError::Memory { round, source })?;

            let local_answer = if round == 0 {
                None
            } else {
                let answer = agents.answer_local(&sub_question, &memory, &mut log)?;
                memory
                    .push_local(round, &sub_question, &answer.answer, answer.answered)
                    .map_err(|source| RunError::Memory { round, source })?;
                Some(answer)
            };

            let judgement = agents.judge(question, &memory, &mut log)?;
            let mut plan = None;
            let decision = if judgement.sufficient {
                stop_reason = StopReason::JudgedSufficient;
                Decision::Generate
            } else if round + 1 == self.config.max_iterations {
                stop_reason = StopReason::MaxIterations;
                Decision::ForcedGenerate
            } else {
                let forbidden = memory.seen_subquestions(Some(question));
                let result = agents.plan(question, &memory, &forbidden, &mut log)?;
                let decision = if result.forced_termination {
                    stop_reason = StopReason::DuplicatePlan;
                    Decision::ForcedGenerate
                } else {
                    Decision::Continue
                };
                plan = Some(result);
                decision
            };

            anomalies.append(&mut log.anomalies);
            iterations.push(IterationRecord {
                round,
                sub_question: std::mem::take(&mut sub_question),
                retrieved,
                global_summary: Some(summary),
                local_answer,
                judgement: Some(judgement),
                plan: plan.clone(),
                decision,
                calls: log.calls,
            });
            match (decision, plan) {
                (Decision::Continue, Some(p)) => sub_question = p.sub_question,
                _ => break,
            }
        }

        let last = iterations.last_mut().expect("max_iterations >= 1");
        let mut log = CallLog::new(last.round, self.config.log_prompts);
        let final_answer = agents.generate(question, &memory, &mut log)?;
        let generator_prompt_tokens = log.calls.last().map_or(0, |c| c.prompt_tokens);
        last.calls.append(&mut log.calls);

        Ok(RunTrace {
            pipeline: PipelineKind::Resp,
            question: question.to_owned(),
            iterations,
            final_answer,
            stop_reason,
            anomalies,
            generator_prompt_tokens,
            memory: Some(memory),
        })
    }

    /// Single retrieval, generator fed the raw documents.
    pub fn run_standard_rag(&self, question: &str) -> Result<RunTrace, RunError> {
        if question.trim().is_empty() {
            return Err(RunError::EmptyQuestion);
        }
        let gateway = self.gateway.conversation();
        let agents = Agents::new(&gateway, &self.templates, self.config.agents);
        let mut log = CallLog::new(0, self.config.log_prompts);
        let retrieved = self.retrieve(question, 0)?;
        let final_answer = agents.generate_from_docs(question, &retrieved, &mut log)?;
        let generator_prompt_tokens = log.calls.last().map_or(0, |c| c.prompt_tokens);
        Ok(RunTrace {
            pipeline: PipelineKind::Standard,
            question: question.to_owned(),
            iterations: vec![IterationRecord {
                round: 0,
                sub_question: question.to_owned(),
                retrieved,
                global_summary: None,
                local_answer: None,
                judgement: None,
                plan: None,
                decision: Decision::Generate,
                calls: log.calls,
            }],
            final_answer,
            stop_reason: StopReason::SinglePass,
            anomalies: log.anomalies,
            generator_prompt_tokens,
            memory: None,
        })
    }
}

/// One row of a top-k sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pipeline: PipelineKind,
    pub k: usize,
    pub n: usize,
    pub mean_f1: f64,
    pub mean_em: f64,
    pub mean_generator_prompt_tokens: f64,
    pub errors: usize,
}

impl SweepRow {
    fn from_summary(pipeline: PipelineKind, k: usize, s: &EvalSummary) -> Self {
        Self {
            pipeline,
            k,
            n: s.n,
            mean_f1: s.mean_f1,
            mean_em: s.mean_em,
            mean_generator_prompt_tokens: s.mean_generator_prompt_tokens,
            errors: s.errors,
        }
    }
}

/// Evaluates each pipeline at each `k` over the same questions. Per-run
/// failures are counted in the rows, never fatal.
pub fn sweep_k(
    base: &Pipeline,
    dataset: &[QAExample],
    k_values: &[usize],
    pipelines: &[PipelineKind],
    parallelism: usize,
) -> Result<Vec<SweepRow>, RunError> {
    let mut rows = Vec::with_capacity(k_values.len() * pipelines.len());
    for &kind in pipelines {
        for &k in k_values {
            let pipeline = base.with_config(PipelineConfig {
                top_k: k,
                ..*base.config()
            })?;
            let report = evaluate(&pipeline, kind, dataset, parallelism);
            rows.push(SweepRow::from_summary(kind, k, &report.summary));
        }
    }
    Ok(rows)
}
