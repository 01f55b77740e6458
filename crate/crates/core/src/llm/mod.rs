//! Chat-completion contract shared by every model backend.
//!
//! Three interchangeable implementations live here: [`ScriptedBackend`]
//! (deterministic fixtures), [`ReplayBackend`] (record/replay keyed by a
//! request digest) and [`RemoteBackend`] (JSON over HTTP). Token accounting
//! is character based throughout.

mod remote;
mod replay;
mod scripted;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{ReplayBackend, ReplayMode, ReplayStore};
pub use scripted::{Matcher, ScriptEntry, ScriptFile, ScriptedBackend, ScriptedResponse};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("script error: {reason}; request: {request}")]
    Script { reason: String, request: String },
    #[error("replay miss for digest {digest}; request: {request}")]
    ReplayMiss { digest: String, request: String },
    #[error("backend transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("backend authentication failed: {0}")]
    Auth(String),
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("backend store io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
    /// Raw image references attached to this message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: Vec<String>) -> Self {
        self.images = images;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    /// When set, the backend is asked for one label and per-label probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_alphabet: Option<Vec<String>>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            max_tokens: 512,
            temperature: 0.0,
            label_alphabet: None,
        }
    }

    /// Characters sent to the model, counting attached image references.
    pub fn prompt_chars(&self) -> u64 {
        self.messages
            .iter()
            .map(|m| {
                let images: usize = m.images.iter().map(|i| i.chars().count()).sum();
                (m.content.chars().count() + images) as u64
            })
            .sum()
    }

    pub fn last_content(&self) -> &str {
        self.messages.last().map_or("", |m| m.content.as_str())
    }

    /// Stable digest over the canonical JSON form of the request.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short human-readable form used in error messages.
    pub fn summary(&self) -> String {
        let last = self.last_content();
        let clipped: String = last.chars().take(160).collect();
        format!(
            "{} message(s), last: {:?}{}",
            self.messages.len(),
            clipped,
            if last.chars().count() > 160 {
                "..."
            } else {
                ""
            }
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_chars: u64,
    pub completion_chars: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_chars += rhs.prompt_chars;
        self.completion_chars += rhs.completion_chars;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_probs: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label_probs: None,
            usage: Usage::default(),
        }
    }
}

pub trait ChatBackend: Send {
    fn id(&self) -> &str;

    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Keeps only probabilities for requested labels. Drops the map when no
/// alphabet was requested.
pub(crate) fn restrict_label_probs(
    probs: Option<BTreeMap<String, f64>>,
    alphabet: Option<&[String]>,
) -> Option<BTreeMap<String, f64>> {
    let alphabet = alphabet?;
    let probs = probs?;
    Some(
        probs
            .into_iter()
            .filter(|(label, _)| alphabet.iter().any(|a| a == label))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let req = ChatRequest::new(vec![ChatMessage::system("s"), ChatMessage::user("hello")]);
        let again = req.clone();
        assert_eq!(req.digest(), again.digest());
        assert_eq!(req.digest().len(), 64);
        let mut mutated = req.clone();
        mutated.messages[1].content.push('!');
        assert_ne!(req.digest(), mutated.digest());
    }

    #[test]
    fn prompt_chars_counts_images() {
        let req = ChatRequest::new(vec![
            ChatMessage::user("abc").with_images(vec!["https://x.example/i.png".into()])
        ]);
        assert_eq!(req.prompt_chars(), 3 + 23);
    }
}
