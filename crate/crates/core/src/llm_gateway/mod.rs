//! Single entry point for every LLM call made by the pipeline.
//!
//! Roles are bound to named backends when the [`Gateway`] is built, so a
//! missing binding fails at startup rather than on the first call.

mod remote;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};
pub use scripted::{Matcher, ScriptError, ScriptedBackend, ScriptedRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleTag {
    Reasoner,
    Summarizer,
    Generator,
}

impl RoleTag {
    pub const ALL: [RoleTag; 3] = [RoleTag::Reasoner, RoleTag::Summarizer, RoleTag::Generator];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Reasoner => "reasoner",
            RoleTag::Summarizer => "summarizer",
            RoleTag::Generator => "generator",
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub prompt: String,
    pub max_output_tokens: usize,
    pub temperature: f64,
    pub role: RoleTag,
}

impl LlmRequest {
    pub fn new(role: RoleTag, prompt: impl Into<String>, max_output_tokens: usize, temperature: f64) -> Result<Self, BackendError> {
        let prompt = prompt.into();
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be at least 1".into()));
        }
        if temperature.is_nan() || temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!("temperature {temperature} is negative")));
        }
        Ok(Self {
            prompt,
            max_output_tokens,
            temperature,
            role,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    #[error("no scripted rule matches prompt:\n{prompt}")]
    ScriptMismatch { prompt: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A failed completion, tagged with the role and loop round that issued it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{role} call failed in round {round}: {source}")]
pub struct LlmError {
    pub role: RoleTag,
    pub round: usize,
    #[source]
    pub source: BackendError,
}

/// A completion provider.
pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    fn generate(&self, request: &LlmRequest) -> Result<String, BackendError>;

    /// Backends with per-conversation state return a fresh instance here.
    /// Stateless backends are shared as-is.
    fn new_conversation(&self) -> Option<Arc<dyn LlmBackend>> {
        None
    }
}

/// Estimates how many model tokens a piece of text costs.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;

    /// Longest whitespace-delimited prefix of `text` whose estimate is within `max`.
    fn truncate<'a>(&self, text: &'a str, max: usize) -> &'a str {
        if self.estimate(text) <= max {
            return text;
        }
        let ends: Vec<usize> = word_spans(text).map(|(_, end)| end).collect();
        // estimate is monotone in the number of words kept
        let (mut lo, mut hi) = (0usize, ends.len());
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.estimate(&text[..ends[mid - 1]]) <= max {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        if lo == 0 {
            ""
        } else {
            &text[..ends[lo - 1]]
        }
    }
}

fn word_spans(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut start = None;
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || {
        while let Some((i, c)) = chars.next() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    return Some((s, i));
                }
            } else if start.is_none() {
                start = Some(i);
            }
            if chars.peek().is_none() {
                if let Some(s) = start.take() {
                    return Some((s, text.len()));
                }
            }
        }
        None
    })
}

/// Whitespace word count scaled by a fixed ratio (1.3 by default), rounded up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WhitespaceEstimator {
    tenths_per_word: usize,
}

impl WhitespaceEstimator {
    pub fn with_ratio_tenths(tenths_per_word: usize) -> Self {
        Self { tenths_per_word }
    }
}

impl Default for WhitespaceEstimator {
    fn default() -> Self {
        Self { tenths_per_word: 13 }
    }
}

impl TokenEstimator for WhitespaceEstimator {
    fn estimate(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * self.tenths_per_word).div_ceil(10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayConfigError {
    #[error("no backend bound to the {0} role")]
    UnboundRole(RoleTag),
    #[error("{role} role is bound to unknown backend `{name}`")]
    UnknownBackend { role: RoleTag, name: String },
}

#[derive(Default)]
pub struct GatewayBuilder {
    backends: BTreeMap<String, Arc<dyn LlmBackend>>,
    routes: BTreeMap<RoleTag, String>,
    estimator: Option<Arc<dyn TokenEstimator>>,
}

impl GatewayBuilder {
    pub fn backend(mut self, name: impl Into<String>, backend: Arc<dyn LlmBackend>) -> Self {
        self.backends.insert(name.into(), backend);
        self
    }

    pub fn bind(mut self, role: RoleTag, backend_name: impl Into<String>) -> Self {
        self.routes.insert(role, backend_name.into());
        self
    }

    /// Binds every role to the same backend.
    pub fn bind_all(mut self, backend_name: &str) -> Self {
        for role in RoleTag::ALL {
            self.routes.insert(role, backend_name.to_owned());
        }
        self
    }

    pub fn estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = Some(estimator);
        self
    }

    pub fn build(self) -> Result<Gateway, GatewayConfigError> {
        for role in RoleTag::ALL {
            let name = self.routes.get(&role).ok_or(GatewayConfigError::UnboundRole(role))?;
            if !self.backends.contains_key(name) {
                return Err(GatewayConfigError::UnknownBackend {
                    role,
                    name: name.clone(),
                });
            }
        }
        Ok(Gateway {
            backends: self.backends,
            routes: self.routes,
            estimator: self.estimator.unwrap_or_else(|| Arc::new(WhitespaceEstimator::default())),
        })
    }
}

/// Routes each request to the backend bound to its role and enforces the
/// output cap.
#[derive(Clone)]
pub struct Gateway {
    backends: BTreeMap<String, Arc<dyn LlmBackend>>,
    routes: BTreeMap<RoleTag, String>,
    estimator: Arc<dyn TokenEstimator>,
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    /// Convenience for the common single-backend setup.
    pub fn single(backend: Arc<dyn LlmBackend>) -> Self {
        Self::builder()
            .backend("default", backend)
            .bind_all("default")
            .build()
            .expect("all roles bound")
    }

    pub fn route_backend(&self, role: RoleTag) -> &Arc<dyn LlmBackend> {
        // build() guarantees every role resolves
        &self.backends[&self.routes[&role]]
    }

    pub fn estimator(&self) -> &Arc<dyn TokenEstimator> {
        &self.estimator
    }

    /// A gateway for one question's run. Stateful backends (scripts) start
    /// over; roles that shared a backend keep sharing it.
    pub fn conversation(&self) -> Gateway {
        let backends = self
            .backends
            .iter()
            .map(|(name, b)| (name.clone(), b.new_conversation().unwrap_or_else(|| Arc::clone(b))))
            .collect();
        Gateway {
            backends,
            routes: self.routes.clone(),
            estimator: Arc::clone(&self.estimator),
        }
    }

    pub fn complete(&self, request: &LlmRequest, round: usize) -> Result<LlmResponse, LlmError> {
        let backend = self.route_backend(request.role);
        let started = Instant::now();
        let raw = backend.generate(request).map_err(|source| LlmError {
            role: request.role,
            round,
            source,
        })?;
        let text = self.estimator.truncate(&raw, request.max_output_tokens).to_owned();
        Ok(LlmResponse {
            text,
            backend_id: backend.id().to_owned(),
            latency: started.elapsed(),
        })
    }
}
