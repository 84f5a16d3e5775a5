//! Dataset loading, answer scoring and batch evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::orchestrator::{Pipeline, PipelineKind, RunTrace, StopReason};
use crate::text::normalize_answer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub example_id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

#[derive(Deserialize)]
struct DatasetRow {
    id: serde_json::Value,
    question: String,
    golden_answers: Vec<String>,
}

/// Reads the first `limit` rows of a JSONL file with keys `id`, `question`
/// and `golden_answers`. Extra keys are ignored; blank lines are skipped.
pub fn load_dataset(path: &Path, limit: usize) -> Result<Vec<QAExample>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        if out.len() >= limit {
            break;
        }
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DatasetError::Malformed {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let row: DatasetRow = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let example_id = match row.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(malformed(format!("`id` must be a string or number, got {other}"))),
        };
        if row.question.trim().is_empty() {
            return Err(malformed("`question` is empty".into()));
        }
        if row.golden_answers.is_empty() {
            return Err(malformed("`golden_answers` is empty".into()));
        }
        out.push(QAExample {
            example_id,
            question: row.question,
            golden_answers: row.golden_answers,
        });
    }
    Ok(out)
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let pred_norm = normalize_answer(prediction);
    let gold_norm = normalize_answer(gold);
    let pred: Vec<&str> = pred_norm.split_whitespace().collect();
    let gold: Vec<&str> = gold_norm.split_whitespace().collect();
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 against the best-matching gold answer.
pub fn token_f1(prediction: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(prediction, g)).fold(0.0, f64::max)
}

/// 1.0 when the normalized prediction equals any normalized gold answer.
pub fn exact_match(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g) == pred) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub example_id: String,
    pub question: String,
    pub prediction: String,
    pub golden_answers: Vec<String>,
    pub f1: f64,
    pub em: f64,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_prompt_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pipeline: PipelineKind,
    pub top_k: usize,
    pub max_iterations: usize,
    pub n: usize,
    pub mean_f1: f64,
    /// `mean_f1` on the 0-100 scale.
    pub mean_f1_x100: f64,
    pub mean_em: f64,
    /// Over successful runs only.
    pub mean_rounds: f64,
    /// Over successful runs only.
    pub mean_generator_prompt_tokens: f64,
    pub errors: usize,
    pub stop_reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub rows: Vec<ExampleRow>,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        let s = &self.summary;
        format!(
            "pipeline={} n={} F1={:.4} (x100 {:.1}) EM={:.4} mean_rounds={:.2} mean_gen_prompt_tokens={:.1} errors={}",
            s.pipeline, s.n, s.mean_f1, s.mean_f1_x100, s.mean_em, s.mean_rounds, s.mean_generator_prompt_tokens, s.errors
        )
    }

    /// Writes `summary.json` and `rows.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let summary = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        fs::write(dir.join("summary.json"), summary + "\n")?;
        let mut out = BufWriter::new(File::create(dir.join("rows.jsonl"))?);
        for row in &self.rows {
            serde_json::to_writer(&mut out, row).expect("row serializes");
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

pub struct Evaluation {
    pub report: EvalReport,
    /// Aligned with `report.rows`; `None` where the run failed.
    pub traces: Vec<Option<RunTrace>>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every example through the pipeline on up to `parallelism` threads.
/// Failed runs score 0 and are counted; they never abort the batch.
pub fn evaluate_with_traces(pipeline: &Pipeline, kind: PipelineKind, dataset: &[QAExample], parallelism: usize) -> Evaluation {
    let run_one = |ex: &QAExample| -> (ExampleRow, Option<RunTrace>) {
        match pipeline.run(kind, &ex.question) {
            Ok(trace) => {
                let row = ExampleRow {
                    example_id: ex.example_id.clone(),
                    question: ex.question.clone(),
                    prediction: trace.final_answer.clone(),
                    golden_answers: ex.golden_answers.clone(),
                    f1: token_f1(&trace.final_answer, &ex.golden_answers),
                    em: exact_match(&trace.final_answer, &ex.golden_answers),
                    rounds: trace.rounds(),
                    stop_reason: Some(trace.stop_reason),
                    generator_prompt_tokens: Some(trace.generator_prompt_tokens),
                    error: None,
                };
                (row, Some(trace))
            }
            Err(e) => {
                tracing::warn!(example = %ex.example_id, "run failed: {e}");
                let row = ExampleRow {
                    example_id: ex.example_id.clone(),
                    question: ex.question.clone(),
                    prediction: String::new(),
                    golden_answers: ex.golden_answers.clone(),
                    f1: 0.0,
                    em: 0.0,
                    rounds: 0,
                    stop_reason: None,
                    generator_prompt_tokens: None,
                    error: Some(e.to_string()),
                };
                (row, None)
            }
        }
    };

    let results: Vec<(ExampleRow, Option<RunTrace>)> = if parallelism <= 1 {
        dataset.iter().map(run_one).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => pool.install(|| dataset.par_iter().map(run_one).collect()),
            Err(e) => {
                tracing::warn!("falling back to sequential evaluation: {e}");
                dataset.iter().map(run_one).collect()
            }
        }
    };
    let (rows, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let ok = || rows.iter().filter(|r| r.error.is_none());
    let mut stop_reasons = BTreeMap::new();
    for row in &rows {
        let key = row.stop_reason.map_or("error", StopReason::as_str);
        *stop_reasons.entry(key.to_owned()).or_default() += 1;
    }
    let mean_f1 = mean(rows.iter().map(|r| r.f1));
    let summary = EvalSummary {
        pipeline: kind,
        top_k: pipeline.config().top_k,
        max_iterations: pipeline.config().max_iterations,
        n: rows.len(),
        mean_f1,
        mean_f1_x100: mean_f1 * 100.0,
        mean_em: mean(rows.iter().map(|r| r.em)),
        mean_rounds: mean(ok().map(|r| r.rounds as f64)),
        mean_generator_prompt_tokens: mean(ok().filter_map(|r| r.generator_prompt_tokens).map(|t| t as f64)),
        errors: rows.len() - ok().count(),
        stop_reasons,
    };
    Evaluation {
        report: EvalReport { summary, rows },
        traces,
    }
}

pub fn evaluate(pipeline: &Pipeline, kind: PipelineKind, dataset: &[QAExample], parallelism: usize) -> EvalReport {
    evaluate_with_traces(pipeline, kind, dataset, parallelism).report
}
