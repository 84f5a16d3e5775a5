//! Deterministic backend driven by a rule script, for tests and replays.
//!
//! A script is JSONL, one rule per line:
//!
//! ```text
//! {"match": "are you able", "response": "Yes"}
//! {"match": 3, "response": "Who is Rachelle Amy Beinart?"}
//! {"match": "Passages:", "response": "No relevant information found.", "role": "summarizer", "repeat": true}
//! ```
//!
//! A string matcher is a substring of the prompt; an integer matcher is the
//! 1-based ordinal of the call within the conversation. For every request the
//! first unconsumed rule (in file order) that matches wins and is consumed,
//! unless it is marked `repeat`. A request no rule matches is an error.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{BackendError, LlmBackend, LlmRequest, RoleTag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matcher {
    Ordinal(usize),
    Substring(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleTag>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat: bool,
}

impl ScriptedRule {
    pub fn new(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Substring(matcher.into()),
            response: response.into(),
            role: None,
            repeat: false,
        }
    }

    pub fn nth(call: usize, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Ordinal(call),
            response: response.into(),
            role: None,
            repeat: false,
        }
    }

    pub fn for_role(mut self, role: RoleTag) -> Self {
        self.role = Some(role);
        self
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    fn matches(&self, request: &LlmRequest, call: usize) -> bool {
        if self.role.is_some_and(|r| r != request.role) {
            return false;
        }
        match &self.matcher {
            Matcher::Ordinal(n) => *n == call,
            Matcher::Substring(s) => request.prompt.contains(s.as_str()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad script rule: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Default)]
struct ConversationState {
    consumed: Vec<bool>,
    calls: usize,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    rules: Arc<Vec<ScriptedRule>>,
    state: Mutex<ConversationState>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, rules: Vec<ScriptedRule>) -> Self {
        Self::from_shared(id.into(), Arc::new(rules))
    }

    fn from_shared(id: String, rules: Arc<Vec<ScriptedRule>>) -> Self {
        let state = ConversationState {
            consumed: vec![false; rules.len()],
            calls: 0,
        };
        Self {
            id,
            rules,
            state: Mutex::new(state),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, ScriptError> {
        let raw = fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut rules = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule = serde_json::from_str(line).map_err(|e| ScriptError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?;
            rules.push(rule);
        }
        Ok(Self::new(format!("scripted:{}", path.display()), rules))
    }

    pub fn rules(&self) -> &[ScriptedRule] {
        &self.rules
    }

    /// Number of requests answered in this conversation so far.
    pub fn calls(&self) -> usize {
        self.state.lock().expect("script state poisoned").calls
    }
}

impl LlmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let mut state = self.state.lock().expect("script state poisoned");
        state.calls += 1;
        let call = state.calls;
        let hit = self
            .rules
            .iter()
            .enumerate()
            .find(|(i, rule)| !state.consumed[*i] && rule.matches(request, call));
        match hit {
            Some((i, rule)) => {
                if !rule.repeat {
                    state.consumed[i] = true;
                }
                Ok(rule.response.clone())
            }
            None => Err(BackendError::ScriptMismatch {
                prompt: request.prompt.clone(),
            }),
        }
    }

    fn new_conversation(&self) -> Option<Arc<dyn LlmBackend>> {
        Some(Arc::new(Self::from_shared(self.id.clone(), Arc::clone(&self.rules))))
    }
}
