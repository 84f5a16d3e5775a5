use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use resp_core::eval_harness::evaluate_with_traces;
use resp_core::orchestrator::{sweep_k, RunError};
use resp_core::{load_dataset, Pipeline, PipelineKind, QAExample};

use crate::config::Settings;
use crate::error::CliError;

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("cannot write `{}`: {e}", path.display()))
}

pub fn index(settings: &Settings, corpus: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let corpus = corpus
        .or_else(|| settings.corpus.clone())
        .ok_or_else(|| CliError::Config("no corpus given: pass a path or set paths.corpus".into()))?;
    let out = out.unwrap_or_else(|| settings.index_dir.clone());
    println!("{}", settings.build_index(&corpus, &out)?);
    Ok(())
}

/// Everything a run needs, checked in order: templates, backends, index.
fn pipeline(settings: &Settings) -> Result<Pipeline, CliError> {
    let templates = settings.templates()?;
    let gateway = settings.gateway()?;
    let retriever = settings.open_retriever()?;
    Pipeline::new(retriever, gateway, templates, settings.pipeline).map_err(|e| CliError::Config(e.to_string()))
}

fn dataset(path: &Path, limit: usize) -> Result<Vec<QAExample>, CliError> {
    let examples = load_dataset(path, limit)?;
    if examples.is_empty() {
        return Err(CliError::Data(format!("dataset `{}` has no examples", path.display())));
    }
    Ok(examples)
}

pub fn ask(settings: &Settings, question: &str, kind: PipelineKind, trace_path: Option<&Path>) -> Result<(), CliError> {
    let pipeline = pipeline(settings)?;
    let trace = pipeline.run(kind, question).map_err(|e| match e {
        RunError::EmptyQuestion | RunError::InvalidConfig(_) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    })?;
    for anomaly in &trace.anomalies {
        tracing::warn!("{anomaly}");
    }
    if let Some(path) = trace_path {
        let json = serde_json::to_string_pretty(&trace).expect("trace serializes");
        fs::write(path, json + "\n").map_err(|e| io_error(path, e))?;
    }
    println!("{}", trace.final_answer);
    Ok(())
}

pub fn eval(settings: &Settings, dataset_path: &Path, kind: PipelineKind, limit: usize, out: Option<&Path>) -> Result<(), CliError> {
    let pipeline = pipeline(settings)?;
    let examples = dataset(dataset_path, limit)?;
    let evaluation = evaluate_with_traces(&pipeline, kind, &examples, settings.parallelism);
    let report = &evaluation.report;

    if let Some(dir) = out {
        report.write(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join("traces.jsonl");
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_error(&path, e))?);
        for trace in evaluation.traces.iter().flatten() {
            serde_json::to_writer(&mut w, trace).expect("trace serializes");
            w.write_all(b"\n").map_err(|e| io_error(&path, e))?;
        }
        w.flush().map_err(|e| io_error(&path, e))?;
    }
    if report.summary.errors > 0 {
        eprintln!("warning: {} of {} runs failed (scored 0)", report.summary.errors, report.summary.n);
    }
    println!("{}", report.summary_line());
    Ok(())
}

pub fn sweep(
    settings: &Settings,
    dataset_path: &Path,
    k_values: &[usize],
    pipelines: &[PipelineKind],
    limit: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(CliError::Config("--k needs one or more values, each at least 1".into()));
    }
    let pipeline = pipeline(settings)?;
    let examples = dataset(dataset_path, limit)?;
    let rows = sweep_k(&pipeline, &examples, k_values, pipelines, settings.parallelism).map_err(|e| CliError::Config(e.to_string()))?;

    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(File::create(path).map_err(|e| io_error(path, e))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    for row in &rows {
        csv.serialize(row).map_err(|e| CliError::Data(format!("cannot write CSV: {e}")))?;
    }
    csv.flush().map_err(|e| CliError::Data(format!("cannot write CSV: {e}")))?;
    Ok(())
}
