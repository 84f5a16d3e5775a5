//! The TOML config file, its command-line and environment overrides, and the
//! fully validated [`Settings`] every command starts from.
//!
//! Precedence is flag, then environment, then file, then built-in default.
//! Relative paths in a config file resolve against the file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use resp_core::corpus_index::{load_corpus, DenseIndex, Document, HttpEmbedder};
use resp_core::llm_gateway::{LlmBackend, RemoteBackend, RemoteConfig, RetryPolicy, ScriptError};
use resp_core::pipeline_agents::{AgentSettings, PromptTemplateSet};
use resp_core::{Bm25Index, Bm25Params, Gateway, PipelineConfig, Retriever, RoleTag, ScriptedBackend};
use serde::Deserialize;

use crate::error::CliError;

pub const ENV_ENDPOINT: &str = "RESP_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "RESP_LLM_MODEL";
pub const ENV_API_KEY: &str = "RESP_LLM_API_KEY";

const DEFAULT_MODEL: &str = "default";
const DEFAULT_INDEX_DIR: &str = "index";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub paths: PathsSection,
    pub retriever: RetrieverSection,
    pub pipeline: PipelineSection,
    pub backends: BTreeMap<String, BackendSection>,
    pub roles: RolesSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub index_dir: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    #[default]
    Bm25,
    Dense,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverSection {
    pub kind: RetrieverKind,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub embedding_endpoint: Option<String>,
    pub embedding_model: Option<String>,
    pub embedding_api_key_env: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub top_k: Option<usize>,
    pub max_iterations: Option<usize>,
    pub max_input_tokens: Option<usize>,
    pub max_output_tokens: Option<usize>,
    pub reasoner_temperature: Option<f64>,
    pub summarizer_temperature: Option<f64>,
    pub generator_temperature: Option<f64>,
    pub parallelism: Option<usize>,
    pub log_prompts: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSection {
    Remote {
        endpoint: String,
        model: Option<String>,
        api_key_env: Option<String>,
        max_attempts: Option<u32>,
        backoff_base_ms: Option<u64>,
        timeout_secs: Option<u64>,
    },
    Scripted {
        script: PathBuf,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolesSection {
    pub reasoner: Option<String>,
    pub summarizer: Option<String>,
    pub generator: Option<String>,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut cfg: AppConfig = toml::from_str(&raw).map_err(|e| CliError::Config(format!("`{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.index_dir);
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.templates_dir);
        fix(&mut self.paths.script);
        for backend in self.backends.values_mut() {
            if let BackendSection::Scripted { script } = backend {
                *script = base.join(&*script);
            }
        }
    }
}

/// Values given on the command line. `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub index_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub log_prompts: bool,
    pub top_k: Option<usize>,
    pub max_iterations: Option<usize>,
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Remote {
        endpoint: String,
        model: String,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    },
    Scripted {
        script: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpec {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub index_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub retriever: RetrieverKind,
    pub bm25: Bm25Params,
    pub embedding: Option<EmbeddingSpec>,
    pub pipeline: PipelineConfig,
    pub parallelism: usize,
    /// Empty when no backend is configured; commands that call a model
    /// reject that in [`Settings::gateway`].
    pub backends: BTreeMap<String, BackendSpec>,
    pub roles: BTreeMap<RoleTag, String>,
}

impl Settings {
    /// Merges file, environment and flags, then validates everything that
    /// can be checked without touching the network.
    pub fn resolve(file: AppConfig, flags: &Overrides, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let env = |key: &str| env(key).filter(|v| !v.trim().is_empty());

        let p = &file.pipeline;
        let defaults = PipelineConfig::default();
        let agent_defaults = AgentSettings::default();
        let pipeline = PipelineConfig {
            top_k: flags.top_k.or(p.top_k).unwrap_or(defaults.top_k),
            max_iterations: flags.max_iterations.or(p.max_iterations).unwrap_or(defaults.max_iterations),
            agents: AgentSettings {
                max_input_tokens: p.max_input_tokens.unwrap_or(agent_defaults.max_input_tokens),
                max_output_tokens: p.max_output_tokens.unwrap_or(agent_defaults.max_output_tokens),
                reasoner_temperature: p.reasoner_temperature.unwrap_or(agent_defaults.reasoner_temperature),
                summarizer_temperature: p.summarizer_temperature.unwrap_or(agent_defaults.summarizer_temperature),
                generator_temperature: p.generator_temperature.unwrap_or(agent_defaults.generator_temperature),
            },
            log_prompts: flags.log_prompts || p.log_prompts.unwrap_or(false),
        };
        pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let parallelism = flags.parallelism.or(p.parallelism).unwrap_or(1);
        if parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }

        let r = &file.retriever;
        let bm25 = Bm25Params {
            k1: r.k1.unwrap_or(Bm25Params::default().k1),
            b: r.b.unwrap_or(Bm25Params::default().b),
        };
        if bm25.k1.is_nan() || bm25.k1 < 0.0 || !(0.0..=1.0).contains(&bm25.b) {
            return Err(CliError::Config(format!("invalid BM25 parameters k1={} b={}", bm25.k1, bm25.b)));
        }
        let embedding = match r.kind {
            RetrieverKind::Bm25 => None,
            RetrieverKind::Dense => {
                let (Some(endpoint), Some(model)) = (&r.embedding_endpoint, &r.embedding_model) else {
                    return Err(CliError::Config(
                        "retriever.kind = \"dense\" needs retriever.embedding_endpoint and retriever.embedding_model".into(),
                    ));
                };
                Some(EmbeddingSpec {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    api_key: r.embedding_api_key_env.as_deref().and_then(&env),
                })
            }
        };

        let (backends, roles) = resolve_backends(&file, flags, &env)?;

        Ok(Settings {
            index_dir: flags
                .index_dir
                .clone()
                .or(file.paths.index_dir)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_INDEX_DIR)),
            corpus: file.paths.corpus,
            templates_dir: flags.templates_dir.clone().or(file.paths.templates_dir),
            retriever: r.kind,
            bm25,
            embedding,
            pipeline,
            parallelism,
            backends,
            roles,
        })
    }

    pub fn templates(&self) -> Result<PromptTemplateSet, CliError> {
        match &self.templates_dir {
            None => Ok(PromptTemplateSet::default()),
            Some(dir) if !dir.is_dir() => Err(CliError::Config(format!("templates directory `{}` does not exist", dir.display()))),
            Some(dir) => PromptTemplateSet::load_overrides(dir).map_err(|e| CliError::Config(e.to_string())),
        }
    }

    /// Builds every configured backend. Scripts are read and parsed here, so
    /// a bad script fails before the first question runs.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        if self.backends.is_empty() {
            return Err(CliError::Config(format!(
                "no LLM backend configured: pass --script or --llm-endpoint, set {ENV_ENDPOINT}, or add [backends] to the config file"
            )));
        }
        let mut builder = Gateway::builder();
        for (name, spec) in &self.backends {
            let backend: Arc<dyn LlmBackend> = match spec {
                BackendSpec::Scripted { script } => Arc::new(ScriptedBackend::from_jsonl(script).map_err(|e| match e {
                    ScriptError::Io { .. } => CliError::Data(e.to_string()),
                    ScriptError::Parse { .. } => CliError::Config(e.to_string()),
                })?),
                BackendSpec::Remote {
                    endpoint,
                    model,
                    api_key,
                    retry,
                    timeout,
                } => {
                    let cfg = RemoteConfig {
                        endpoint: endpoint.clone(),
                        model: model.clone(),
                        api_key: api_key.clone(),
                        timeout: *timeout,
                        retry: *retry,
                    };
                    Arc::new(RemoteBackend::new(cfg).map_err(|e| CliError::Config(format!("backend `{name}`: {e}")))?)
                }
            };
            builder = builder.backend(name.clone(), backend);
        }
        for (role, name) in &self.roles {
            builder = builder.bind(*role, name.clone());
        }
        builder.build().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn open_retriever(&self) -> Result<Arc<dyn Retriever>, CliError> {
        if !self.index_dir.is_dir() {
            return Err(CliError::Data(format!(
                "index directory `{}` does not exist (build it with `resp index`)",
                self.index_dir.display()
            )));
        }
        match self.retriever {
            RetrieverKind::Bm25 => Ok(Arc::new(Bm25Index::open(&self.index_dir)?.with_params(self.bm25))),
            RetrieverKind::Dense => Ok(Arc::new(DenseIndex::open(&self.index_dir, self.embedder()?)?)),
        }
    }

    fn embedder(&self) -> Result<HttpEmbedder, CliError> {
        let spec = self.embedding.as_ref().expect("validated in resolve");
        Ok(HttpEmbedder::new(&spec.endpoint, &spec.model, spec.api_key.clone())?)
    }

    /// Builds and saves the configured index kind; returns the document count
    /// and, for BM25, the index statistics line.
    pub fn build_index(&self, corpus: &Path, out: &Path) -> Result<String, CliError> {
        let docs: Vec<Document> = load_corpus(corpus)?;
        match self.retriever {
            RetrieverKind::Bm25 => {
                let index = Bm25Index::build(docs, self.bm25)?;
                index.save(out)?;
                let s = index.stats();
                Ok(format!(
                    "indexed {} documents, {} terms, avg length {:.2} tokens -> {}",
                    s.num_documents,
                    s.num_terms,
                    s.avg_doc_length,
                    out.display()
                ))
            }
            RetrieverKind::Dense => {
                let n = docs.len();
                let index = DenseIndex::build(docs, self.embedder()?)?;
                index.save(out)?;
                Ok(format!("indexed {n} documents (dense) -> {}", out.display()))
            }
        }
    }
}

type Backends = (BTreeMap<String, BackendSpec>, BTreeMap<RoleTag, String>);

fn all_roles(name: &str) -> BTreeMap<RoleTag, String> {
    RoleTag::ALL.into_iter().map(|r| (r, name.to_owned())).collect()
}

fn remote_default(endpoint: String, flags: &Overrides, env: &dyn Fn(&str) -> Option<String>) -> Backends {
    let spec = BackendSpec::Remote {
        endpoint,
        model: flags.llm_model.clone().or_else(|| env(ENV_MODEL)).unwrap_or_else(|| DEFAULT_MODEL.into()),
        api_key: env(ENV_API_KEY),
        retry: RetryPolicy::default(),
        timeout: RemoteConfig::new("", "").timeout,
    };
    (BTreeMap::from([("remote".to_owned(), spec)]), all_roles("remote"))
}

fn scripted_default(script: PathBuf) -> Backends {
    (BTreeMap::from([("script".to_owned(), BackendSpec::Scripted { script })]), all_roles("script"))
}

/// The shortcuts (`--script`, `--llm-endpoint`, the endpoint variable,
/// `paths.script`) each replace the file's backend table with one backend
/// bound to every role.
fn resolve_backends(file: &AppConfig, flags: &Overrides, env: &dyn Fn(&str) -> Option<String>) -> Result<Backends, CliError> {
    match (&flags.script, &flags.llm_endpoint) {
        (Some(_), Some(_)) => return Err(CliError::Config("--script and --llm-endpoint are mutually exclusive".into())),
        (Some(script), None) => return Ok(scripted_default(script.clone())),
        (None, Some(endpoint)) => return Ok(remote_default(endpoint.clone(), flags, env)),
        (None, None) => {}
    }
    if let Some(endpoint) = env(ENV_ENDPOINT) {
        return Ok(remote_default(endpoint, flags, env));
    }
    if let Some(script) = &file.paths.script {
        if !file.backends.is_empty() {
            return Err(CliError::Config("paths.script and [backends] are mutually exclusive".into()));
        }
        return Ok(scripted_default(script.clone()));
    }
    if file.backends.is_empty() {
        return Ok((BTreeMap::new(), BTreeMap::new()));
    }

    let mut backends = BTreeMap::new();
    for (name, section) in &file.backends {
        let spec = match section {
            BackendSection::Scripted { script } => BackendSpec::Scripted { script: script.clone() },
            BackendSection::Remote {
                endpoint,
                model,
                api_key_env,
                max_attempts,
                backoff_base_ms,
                timeout_secs,
            } => {
                let default_retry = RetryPolicy::default();
                let retry = RetryPolicy {
                    max_attempts: max_attempts.unwrap_or(default_retry.max_attempts),
                    base_delay: backoff_base_ms.map_or(default_retry.base_delay, Duration::from_millis),
                };
                if retry.max_attempts == 0 {
                    return Err(CliError::Config(format!("backends.{name}.max_attempts must be at least 1")));
                }
                BackendSpec::Remote {
                    endpoint: endpoint.clone(),
                    model: flags
                        .llm_model
                        .clone()
                        .or_else(|| model.clone())
                        .or_else(|| env(ENV_MODEL))
                        .unwrap_or_else(|| DEFAULT_MODEL.into()),
                    api_key: env(api_key_env.as_deref().unwrap_or(ENV_API_KEY)),
                    retry,
                    timeout: timeout_secs.map_or(RemoteConfig::new("", "").timeout, Duration::from_secs),
                }
            }
        };
        backends.insert(name.clone(), spec);
    }

    let only = (backends.len() == 1).then(|| backends.keys().next().cloned()).flatten();
    let r = &file.roles;
    let mut roles = BTreeMap::new();
    for (role, bound) in [
        (RoleTag::Reasoner, &r.reasoner),
        (RoleTag::Summarizer, &r.summarizer),
        (RoleTag::Generator, &r.generator),
    ] {
        let name = bound
            .clone()
            .or_else(|| only.clone())
            .ok_or_else(|| CliError::Config(format!("roles.{role} is not bound to a backend")))?;
        if !backends.contains_key(&name) {
            return Err(CliError::Config(format!("roles.{role} names unknown backend `{name}`")));
        }
        roles.insert(role, name);
    }
    Ok((backends, roles))
}
