//! Iterative retrieval-augmented question answering with a dual-function
//! summarizer.
//!
//! Each run retrieves documents for the current sub-question, condenses them
//! into two memory queues (evidence for the overarching question and a
//! history of answered sub-questions), asks a reasoner whether the memory is
//! sufficient, and either plans a new, non-repeating sub-question or hands
//! the memory to a generator for the final answer.

pub mod corpus_index;
pub mod eval_harness;
pub mod llm_gateway;
pub mod memory_state;
pub mod orchestrator;
pub mod pipeline_agents;
pub mod text;

pub use corpus_index::{Bm25Index, Bm25Params, Document, IndexStats, RetrievedDocument, Retriever};
pub use eval_harness::{evaluate, load_dataset, token_f1, EvalReport, QAExample};
pub use llm_gateway::{Gateway, LlmBackend, RoleTag, ScriptedBackend, ScriptedRule};
pub use memory_state::MemoryState;
pub use orchestrator::{Pipeline, PipelineConfig, PipelineKind, RunTrace, StopReason};
