use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::world::World;
use crate::action::aci::{AciConfig, PlaceholderKind};
use crate::mllm::FixtureVisualBackend;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{file}: cannot read: {message}")]
    Io { file: String, message: String },
    #[error("{file}: at `{path}`: {message}")]
    Schema {
        file: String,
        path: String,
        message: String,
    },
}

impl LoadError {
    fn schema(file: &Path, path: &str, message: impl Into<String>) -> Self {
        LoadError::Schema {
            file: file.display().to_string(),
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Unimodal,
    Multimodal,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Unimodal => "unimodal",
            Modality::Multimodal => "multimodal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuyerTurn {
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_phase: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAssertion {
    pub path: String,
    pub expected: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactMatch {
    Substring(String),
    Numeric { value: f64, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFact {
    #[serde(rename = "match")]
    pub matcher: FactMatch,
    #[serde(default = "yes")]
    pub must_appear: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriteria {
    #[serde(default)]
    pub state_assertions: Vec<StateAssertion>,
    #[serde(default)]
    pub response_facts: Vec<ResponseFact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    /// Service workflow, e.g. pre_sales, after_sales, complaint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub modality: Modality,
    pub world_seed: World,
    pub buyer_script: Vec<BuyerTurn>,
    pub success: SuccessCriteria,
    pub max_turns: usize,
    /// Scripted-backend file, relative to the task file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

impl Task {
    pub fn load(file: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(file).map_err(|e| LoadError::Io {
            file: file.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, file)
    }

    pub fn parse(text: &str, file: &Path) -> Result<Self, LoadError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut task: Task = serde_path_to_error::deserialize(de)
            .map_err(|e| LoadError::schema(file, &e.path().to_string(), e.inner().to_string()))?;
        task.source = Some(file.to_path_buf());
        task.validate(file)?;
        Ok(task)
    }

    fn validate(&self, file: &Path) -> Result<(), LoadError> {
        if self.task_id.trim().is_empty() {
            return Err(LoadError::schema(file, "task_id", "must be non-empty"));
        }
        if self.buyer_script.is_empty() {
            return Err(LoadError::schema(
                file,
                "buyer_script",
                "needs at least one turn",
            ));
        }
        if self.max_turns < self.buyer_script.len() {
            return Err(LoadError::schema(
                file,
                "max_turns",
                format!(
                    "{} is below the {} scripted turns",
                    self.max_turns,
                    self.buyer_script.len()
                ),
            ));
        }
        if self.success.state_assertions.is_empty() && self.success.response_facts.is_empty() {
            return Err(LoadError::schema(
                file,
                "success",
                "needs at least one assertion or fact",
            ));
        }
        if self.modality == Modality::Multimodal && self.image_urls().is_empty() {
            return Err(LoadError::schema(
                file,
                "buyer_script",
                "multimodal task embeds no image URL",
            ));
        }
        self.world_seed
            .validate()
            .map_err(|e| LoadError::schema(file, "world_seed", e.to_string()))
    }

    /// Image URLs embedded in the buyer script, in order of appearance.
    pub fn image_urls(&self) -> Vec<String> {
        let aci = AciConfig::default();
        let mut urls: Vec<String> = Vec::new();
        for turn in &self.buyer_script {
            for (_, url, kind) in aci.qualifying_urls(&turn.utterance) {
                if kind == PlaceholderKind::Image && !urls.iter().any(|u| u == url) {
                    urls.push(url.to_string());
                }
            }
        }
        urls
    }

    /// Checks that every embedded image exists in the fixture assets.
    pub fn check_assets(&self, assets: &FixtureVisualBackend) -> Result<(), LoadError> {
        let file = self.source.clone().unwrap_or_default();
        match self.image_urls().into_iter().find(|u| !assets.contains(u)) {
            Some(missing) => Err(LoadError::schema(
                &file,
                "buyer_script",
                format!("image `{missing}` is not in the asset fixtures"),
            )),
            None => Ok(()),
        }
    }

    pub fn script_path(&self) -> Option<PathBuf> {
        let script = self.script.as_ref()?;
        let base = self
            .source
            .as_deref()
            .and_then(Path::parent)
            .unwrap_or_else(|| Path::new("."));
        Some(base.join(script))
    }

    /// Fresh, independent copy of the seed world.
    pub fn reset(&self) -> World {
        self.world_seed.clone()
    }
}
