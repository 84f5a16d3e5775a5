//! `resp`: build an index, ask one question, or evaluate a dataset.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resp_core::PipelineKind;
use tracing_subscriber::EnvFilter;

use crate::config::{AppConfig, Overrides, Settings};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "resp", version, about = "Iterative retrieval-augmented question answering")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = "RESP_CONFIG")]
    config: Option<PathBuf>,
    /// Index directory; overrides `paths.index_dir`.
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    /// Directory of prompt template overrides (`judge.txt`, `plan.txt`, ...).
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Chat-completion endpoint used for every role.
    #[arg(long, global = true)]
    llm_endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, global = true)]
    llm_model: Option<String>,
    /// Scripted backend rules (JSONL) used for every role.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Keep full prompt text in traces.
    #[arg(long, global = true)]
    log_prompts: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from a JSONL corpus.
    Index {
        /// Corpus with `id`, `title`, `contents` per line; defaults to `paths.corpus`.
        corpus: Option<PathBuf>,
        /// Output directory; defaults to the configured index directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question.
    Ask {
        question: String,
        #[command(flatten)]
        run: RunArgs,
        /// Write the full run trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a pipeline on a QA dataset.
    Eval {
        /// JSONL with `id`, `question`, `golden_answers` per line.
        dataset: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Number of examples to evaluate.
        #[arg(long, default_value_t = 1000)]
        limit: usize,
        /// Worker threads; overrides `pipeline.parallelism`.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Directory for `summary.json`, `rows.jsonl` and `traces.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate each pipeline at several top-k values and emit CSV.
    Sweep {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,5,10,15")]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "resp,standard")]
        pipelines: Vec<PipelineKind>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        limit: usize,
        #[arg(long)]
        parallelism: Option<usize>,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = PipelineKind::Resp)]
    pipeline: PipelineKind,
    /// Documents retrieved per round.
    #[arg(long)]
    k: Option<usize>,
    /// Retrieval rounds, counting the first.
    #[arg(long)]
    max_iters: Option<usize>,
}

fn settings(global: &GlobalArgs, command: &Command) -> Result<Settings, CliError> {
    let file = match &global.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    let mut flags = Overrides {
        index_dir: global.index.clone(),
        templates_dir: global.templates.clone(),
        script: global.script.clone(),
        llm_endpoint: global.llm_endpoint.clone(),
        llm_model: global.llm_model.clone(),
        log_prompts: global.log_prompts,
        ..Default::default()
    };
    match command {
        Command::Index { .. } => {}
        Command::Ask { run, .. } => {
            flags.top_k = run.k;
            flags.max_iterations = run.max_iters;
        }
        Command::Eval { run, parallelism, .. } => {
            flags.top_k = run.k;
            flags.max_iterations = run.max_iters;
            flags.parallelism = *parallelism;
        }
        Command::Sweep { max_iters, parallelism, .. } => {
            flags.max_iterations = *max_iters;
            flags.parallelism = *parallelism;
        }
    }
    Settings::resolve(file, &flags, &|key| std::env::var(key).ok())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = settings(&cli.global, &cli.command)?;
    match cli.command {
        Command::Index { corpus, out } => commands::index(&settings, corpus, out),
        Command::Ask { question, run, trace } => commands::ask(&settings, &question, run.pipeline, trace.as_deref()),
        Command::Eval {
            dataset, run, limit, out, ..
        } => commands::eval(&settings, &dataset, run.pipeline, limit, out.as_deref()),
        Command::Sweep {
            dataset,
            k,
            pipelines,
            limit,
            out,
            ..
        } => commands::sweep(&settings, &dataset, &k, &pipelines, limit, out.as_deref()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("RESP_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
