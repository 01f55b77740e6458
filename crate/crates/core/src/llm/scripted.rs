use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{restrict_label_probs, BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

/// Which requests a script entry answers.
///
/// Step entries fire when their index equals the number of step entries
/// already consumed. Otherwise the first `contains` entry (in file order)
/// whose substring occurs in the last request message fires. `contains`
/// entries are reusable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Step(usize),
    Contains(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_probs: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub response: ScriptedResponse,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptFile {
    pub entries: Vec<ScriptEntry>,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        script
            .validate()
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut steps = HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if let Matcher::Step(s) = entry.matcher {
                if !steps.insert(s) {
                    return Err(format!("entry {i}: duplicate step {s}"));
                }
            }
            if let Some(probs) = &entry.response.label_probs {
                if probs.values().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(format!(
                        "entry {i}: negative or non-finite label probability"
                    ));
                }
                if probs.values().sum::<f64>() > 1.0 + 1e-9 {
                    return Err(format!("entry {i}: label probabilities sum above 1"));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic backend serving responses from a [`ScriptFile`].
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    id: String,
    script: ScriptFile,
    cursor: usize,
    calls: usize,
}

impl ScriptedBackend {
    pub fn new(script: ScriptFile) -> Self {
        Self {
            id: "scripted".to_string(),
            script,
            cursor: 0,
            calls: 0,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let mut backend = Self::new(ScriptFile::load(path)?);
        backend.id = format!("scripted:{}", path.display());
        Ok(backend)
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    fn select(&self, request: &ChatRequest) -> Option<&ScriptEntry> {
        let by_step = self
            .script
            .entries
            .iter()
            .find(|e| e.matcher == Matcher::Step(self.cursor));
        by_step.or_else(|| {
            let last = request.last_content();
            self.script
                .entries
                .iter()
                .find(|e| matches!(&e.matcher, Matcher::Contains(s) if last.contains(s.as_str())))
        })
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if request.messages.is_empty() {
            return Err(BackendError::Script {
                reason: "request has no messages".into(),
                request: request.summary(),
            });
        }
        let entry = self
            .select(request)
            .cloned()
            .ok_or_else(|| BackendError::Script {
                reason: format!(
                    "no script entry matches call {} (step cursor {})",
                    self.calls, self.cursor
                ),
                request: request.summary(),
            })?;
        if matches!(entry.matcher, Matcher::Step(_)) {
            self.cursor += 1;
        }
        self.calls += 1;

        let text = entry.response.text;
        let usage = Usage {
            prompt_chars: request.prompt_chars(),
            completion_chars: text.chars().count() as u64,
        };
        Ok(ChatResponse {
            label_probs: restrict_label_probs(
                entry.response.label_probs,
                request.label_alphabet.as_deref(),
            ),
            text,
            usage,
        })
    }
}
