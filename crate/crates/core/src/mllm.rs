//! Multimodal model used as a tool: a targeted instruction plus an image
//! reference in, a concise description out.
//!
//! [`FixtureVisualBackend`] answers from annotated fixture assets;
//! [`RemoteVisualBackend`] sends one chat request with the image attached.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{BackendError, ChatMessage, ChatRequest, RemoteBackend};

#[derive(Debug, Error, PartialEq)]
pub enum MllmError {
    #[error("instruction must be non-empty")]
    EmptyInstruction,
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("visual backend error after {attempts} attempt(s): {message}")]
    Backend { message: String, attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualQuery {
    pub instruction: String,
    pub asset_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualDescription {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

pub trait VisualBackend: Send + Sync {
    fn id(&self) -> &str;

    fn describe(&self, query: &VisualQuery) -> Result<VisualDescription, MllmError>;
}

/// Checks the instruction precondition, then delegates to `backend`.
pub fn describe(
    query: &VisualQuery,
    backend: &dyn VisualBackend,
) -> Result<VisualDescription, MllmError> {
    if query.instruction.trim().is_empty() {
        return Err(MllmError::EmptyInstruction);
    }
    backend.describe(query)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRule {
    pub keywords: Vec<String>,
    pub category: String,
}

fn rule(category: &str, keywords: &[&str]) -> CategoryRule {
    CategoryRule {
        keywords: keywords.iter().map(|k| k.to_string()).collect(),
        category: category.to_string(),
    }
}

/// Rules applied to assets that do not bring their own.
pub fn default_rules() -> Vec<CategoryRule> {
    vec![
        rule(
            "damage",
            &["damage", "broken", "crack", "defect", "dent", "scratch"],
        ),
        rule("color", &["color", "colour"]),
        rule("count", &["how many", "count", "number of"]),
        rule("text", &["text", "label", "written", "serial", "read"]),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAsset {
    #[serde(skip)]
    pub asset_id: String,
    pub annotations: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<CategoryRule>,
}

impl ImageAsset {
    fn category_for(&self, instruction: &str) -> Option<String> {
        let lowered = instruction.to_lowercase();
        let defaults;
        let rules = if self.rules.is_empty() {
            defaults = default_rules();
            &defaults
        } else {
            &self.rules
        };
        rules
            .iter()
            .find(|r| {
                r.keywords
                    .iter()
                    .any(|k| lowered.contains(&k.to_lowercase()))
            })
            .map(|r| r.category.clone())
    }

    pub fn answer(&self, instruction: &str) -> &str {
        self.category_for(instruction)
            .and_then(|c| self.annotations.get(&c))
            .unwrap_or_else(|| &self.annotations["default"])
    }
}

/// Deterministic backend over annotated fixture assets.
#[derive(Debug, Default)]
pub struct FixtureVisualBackend {
    assets: BTreeMap<String, ImageAsset>,
    calls: AtomicUsize,
}

impl FixtureVisualBackend {
    /// Parses a JSON map `asset_id -> {annotations, rules?}`.
    pub fn from_json(value: &Value) -> Result<Self, MllmError> {
        let raw: BTreeMap<String, ImageAsset> =
            serde_json::from_value(value.clone()).map_err(|e| MllmError::Fixture(e.to_string()))?;
        let mut assets = BTreeMap::new();
        for (id, mut asset) in raw {
            if !asset.annotations.contains_key("default") {
                return Err(MllmError::Fixture(format!(
                    "asset `{id}` has no default annotation"
                )));
            }
            if asset.annotations.values().any(|t| t.trim().is_empty()) {
                return Err(MllmError::Fixture(format!(
                    "asset `{id}` has an empty annotation"
                )));
            }
            asset.asset_id = id.clone();
            assets.insert(id, asset);
        }
        Ok(Self {
            assets,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn load(path: &Path) -> Result<Self, MllmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MllmError::Fixture(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| MllmError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&value)
    }

    pub fn contains(&self, asset_id: &str) -> bool {
        self.assets.contains_key(asset_id)
    }

    pub fn asset_ids(&self) -> impl Iterator<Item = &str> {
        self.assets.keys().map(String::as_str)
    }

    /// Number of describe calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Clone for FixtureVisualBackend {
    fn clone(&self) -> Self {
        Self {
            assets: self.assets.clone(),
            calls: AtomicUsize::new(0),
        }
    }
}

impl VisualBackend for FixtureVisualBackend {
    fn id(&self) -> &str {
        "fixture"
    }

    fn describe(&self, query: &VisualQuery) -> Result<VisualDescription, MllmError> {
        if query.instruction.trim().is_empty() {
            return Err(MllmError::EmptyInstruction);
        }
        let asset = self
            .assets
            .get(&query.asset_id)
            .ok_or_else(|| MllmError::UnknownAsset(query.asset_id.clone()))?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(VisualDescription {
            text: asset.answer(&query.instruction).to_string(),
            backend_id: self.id().to_string(),
            latency_ms: 0,
        })
    }
}

/// Visual backend reached over the chat contract with an image attachment.
#[derive(Clone)]
pub struct RemoteVisualBackend {
    id: String,
    client: RemoteBackend,
}

impl RemoteVisualBackend {
    pub fn new(client: RemoteBackend) -> Self {
        Self {
            id: format!("remote-visual:{}", client.config().model),
            client,
        }
    }
}

impl VisualBackend for RemoteVisualBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn describe(&self, query: &VisualQuery) -> Result<VisualDescription, MllmError> {
        if query.instruction.trim().is_empty() {
            return Err(MllmError::EmptyInstruction);
        }
        let mut request = ChatRequest::new(vec![
            ChatMessage::system(
                "Answer the instruction about the attached image in one or two short sentences.",
            ),
            ChatMessage::user(query.instruction.clone()).with_images(vec![query.asset_id.clone()]),
        ]);
        request.max_tokens = 128;
        let started = Instant::now();
        let response = self.client.send(&request).map_err(|e| match e {
            BackendError::Transport { message, attempts } => {
                MllmError::Backend { message, attempts }
            }
            other => MllmError::Backend {
                message: other.to_string(),
                attempts: 1,
            },
        })?;
        let text = response.text.trim().to_string();
        if text.is_empty() {
            return Err(MllmError::Backend {
                message: "empty description".into(),
                attempts: 1,
            });
        }
        Ok(VisualDescription {
            text,
            backend_id: self.id.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

/// How the multimodal model participates in a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Text-only planner; images reach it as placeholders resolved by describe.
    #[default]
    Tool,
    /// The planner itself receives raw image references; describe is never called.
    Planner,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Tool => "tool",
            Strategy::Planner => "planner",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tool" => Ok(Strategy::Tool),
            "planner" => Ok(Strategy::Planner),
            other => Err(format!(
                "unknown strategy `{other}` (expected tool or planner)"
            )),
        }
    }
}
