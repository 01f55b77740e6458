//! Working memory (the dialogue transcript) and long-term memory (a
//! namespaced domain-knowledge store).
//!
//! Working memory is append-only and owned by exactly one session. The
//! long-term store is keyed by `(namespace, key)` with last-write-wins
//! updates; share it across sessions through [`SharedStore`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action::aci::is_placeholder;

/// Marker prepended by [`WorkingMemory::render_context`] when older turns were dropped.
pub const ELISION_MARKER: &str = "[... earlier turns omitted ...]\n";

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("sequencing error: expected turn_index {expected}, got {got}")]
    Sequencing { expected: usize, got: usize },
    #[error("message has no content parts")]
    EmptyMessage,
    #[error("invalid content part: {0}")]
    InvalidPart(String),
    #[error("schema error: unknown namespace `{0}`")]
    UnknownNamespace(String),
    #[error("schema error: document key must be non-empty")]
    EmptyKey,
    #[error("transcript io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Agent,
    Tool,
    System,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Buyer => "buyer",
            Role::Agent => "agent",
            Role::Tool => "tool",
            Role::System => "system",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Text,
    ImageRef,
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentPart {
    pub kind: PartKind,
    pub value: String,
}

impl ContentPart {
    pub fn text(value: impl Into<String>) -> Self {
        Self {
            kind: PartKind::Text,
            value: value.into(),
        }
    }

    pub fn image_ref(url: impl Into<String>) -> Result<Self, MemoryError> {
        let part = Self {
            kind: PartKind::ImageRef,
            value: url.into(),
        };
        part.validate()?;
        Ok(part)
    }

    pub fn placeholder(token: impl Into<String>) -> Result<Self, MemoryError> {
        let part = Self {
            kind: PartKind::Placeholder,
            value: token.into(),
        };
        part.validate()?;
        Ok(part)
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        match self.kind {
            PartKind::Text => Ok(()),
            PartKind::ImageRef => url::Url::parse(&self.value)
                .map(|_| ())
                .map_err(|e| MemoryError::InvalidPart(format!("image_ref `{}`: {e}", self.value))),
            PartKind::Placeholder if is_placeholder(&self.value) => Ok(()),
            PartKind::Placeholder => Err(MemoryError::InvalidPart(format!(
                "placeholder `{}` does not match the placeholder grammar",
                self.value
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<ContentPart>,
    pub turn_index: usize,
    /// Simulated clock tick.
    pub timestamp: u64,
}

impl Message {
    pub fn new(role: Role, parts: Vec<ContentPart>, turn_index: usize, timestamp: u64) -> Self {
        Self {
            role,
            parts,
            turn_index,
            timestamp,
        }
    }

    pub fn text(role: Role, text: impl Into<String>, turn_index: usize, timestamp: u64) -> Self {
        Self::new(role, vec![ContentPart::text(text)], turn_index, timestamp)
    }

    /// Parts joined by single spaces, each part rendered by its value.
    pub fn body(&self) -> String {
        self.parts
            .iter()
            .map(|p| p.value.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One role-tagged line as used in prompts.
    pub fn render(&self) -> String {
        format!("{}: {}\n", self.role, self.body())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingMemory {
    pub session_id: String,
    turns: Vec<Message>,
}

impl WorkingMemory {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
        }
    }

    pub fn turns(&self) -> &[Message] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn next_index(&self) -> usize {
        self.turns.len()
    }

    pub fn append_turn(&mut self, msg: Message) -> Result<(), MemoryError> {
        if msg.turn_index != self.turns.len() {
            return Err(MemoryError::Sequencing {
                expected: self.turns.len(),
                got: msg.turn_index,
            });
        }
        if msg.parts.is_empty() {
            return Err(MemoryError::EmptyMessage);
        }
        for part in &msg.parts {
            part.validate()?;
        }
        self.turns.push(msg);
        Ok(())
    }

    /// Renders role-tagged turns within `budget` characters.
    ///
    /// Whole turns are dropped oldest-first and [`ELISION_MARKER`] is
    /// prepended when anything was dropped. The newest turn is always kept;
    /// if it alone cannot fit, only its trailing characters are kept.
    pub fn render_context(&self, budget: usize) -> String {
        assert!(budget > 0, "render_context budget must be positive");
        if self.turns.is_empty() {
            return String::new();
        }
        let lines: Vec<String> = self.turns.iter().map(Message::render).collect();
        let total: usize = lines.iter().map(|l| l.chars().count()).sum();
        if total <= budget {
            return lines.concat();
        }

        let marker_len = ELISION_MARKER.chars().count();
        let mut used = marker_len;
        let mut first_kept = lines.len();
        for (i, line) in lines.iter().enumerate().rev() {
            let len = line.chars().count();
            if used + len > budget {
                break;
            }
            used += len;
            first_kept = i;
        }

        if first_kept == lines.len() {
            let last = lines.last().expect("non-empty");
            let room = budget.saturating_sub(marker_len);
            let (prefix, room) = if room == 0 {
                ("", budget)
            } else {
                (ELISION_MARKER, room)
            };
            let skip = last.chars().count().saturating_sub(room);
            let tail: String = last.chars().skip(skip).collect();
            return format!("{prefix}{tail}");
        }

        let mut out = String::from(ELISION_MARKER);
        for line in &lines[first_kept..] {
            out.push_str(line);
        }
        out
    }

    /// Writes every turn as one JSON line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), MemoryError> {
        for msg in &self.turns {
            let line = TranscriptLine {
                session_id: self.session_id.clone(),
                turn_index: msg.turn_index,
                role: msg.role,
                parts: msg.parts.clone(),
                timestamp: msg.timestamp,
            };
            let json = serde_json::to_string(&line).map_err(|e| MemoryError::Io(e.to_string()))?;
            writeln!(out, "{json}").map_err(|e| MemoryError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, MemoryError> {
        let mut wm: Option<WorkingMemory> = None;
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| MemoryError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TranscriptLine = serde_json::from_str(&line)
                .map_err(|e| MemoryError::Io(format!("line {}: {e}", n + 1)))?;
            let wm = wm.get_or_insert_with(|| WorkingMemory::new(row.session_id.clone()));
            wm.append_turn(Message::new(
                row.role,
                row.parts,
                row.turn_index,
                row.timestamp,
            ))?;
        }
        Ok(wm.unwrap_or_else(|| WorkingMemory::new("")))
    }
}

/// One line of the persisted transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub session_id: String,
    pub turn_index: usize,
    pub role: Role,
    pub parts: Vec<ContentPart>,
    #[serde(default)]
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    PlatformPolicy,
    StorePromotion,
    Product,
    Order,
    Logistics,
    BuyerProfile,
}

impl Namespace {
    pub const ALL: [Namespace; 6] = [
        Namespace::PlatformPolicy,
        Namespace::StorePromotion,
        Namespace::Product,
        Namespace::Order,
        Namespace::Logistics,
        Namespace::BuyerProfile,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Namespace::PlatformPolicy => "platform_policy",
            Namespace::StorePromotion => "store_promotion",
            Namespace::Product => "product",
            Namespace::Order => "order",
            Namespace::Logistics => "logistics",
            Namespace::BuyerProfile => "buyer_profile",
        }
    }
}

impl FromStr for Namespace {
    type Err = MemoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Namespace::ALL
            .into_iter()
            .find(|ns| ns.as_str() == s)
            .ok_or_else(|| MemoryError::UnknownNamespace(s.to_string()))
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub key: String,
    pub body: Value,
    pub updated_at: u64,
}

impl Document {
    /// Lowercased tokens of the key's words and of every string and number
    /// leaf in the body.
    fn tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .key
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        collect_tokens(&self.body, &mut out);
        out
    }
}

fn collect_tokens(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::String(s) => out.extend(tokenize(s)),
        Value::Number(n) => out.push(n.to_string()),
        Value::Bool(b) => out.push(b.to_string()),
        Value::Array(items) => items.iter().for_each(|v| collect_tokens(v, out)),
        Value::Object(map) => map.values().for_each(|v| collect_tokens(v, out)),
        Value::Null => {}
    }
}

fn tokenize(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
}

/// Namespaced domain-knowledge store with last-write-wins updates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LongTermStore {
    namespaces: BTreeMap<Namespace, BTreeMap<String, Document>>,
    clock: u64,
}

pub type SharedStore = Arc<RwLock<LongTermStore>>;

impl LongTermStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Moves the store clock forward. Earlier ticks are ignored.
    pub fn advance_to(&mut self, tick: u64) {
        self.clock = self.clock.max(tick);
    }

    pub fn put(&mut self, namespace: Namespace, key: &str, body: Value) -> Result<(), MemoryError> {
        if key.is_empty() {
            return Err(MemoryError::EmptyKey);
        }
        let docs = self.namespaces.entry(namespace).or_default();
        let updated_at = docs
            .get(key)
            .map_or(self.clock, |d| d.updated_at.max(self.clock));
        docs.insert(
            key.to_string(),
            Document {
                key: key.to_string(),
                body,
                updated_at,
            },
        );
        Ok(())
    }

    /// String-namespace variant used by internal actions.
    pub fn put_named(
        &mut self,
        namespace: &str,
        key: &str,
        body: Value,
    ) -> Result<(), MemoryError> {
        self.put(namespace.parse()?, key, body)
    }

    pub fn get(&self, namespace: Namespace, key: &str) -> Option<&Document> {
        self.namespaces.get(&namespace)?.get(key)
    }

    pub fn documents(&self, namespace: Namespace) -> impl Iterator<Item = &Document> {
        self.namespaces
            .get(&namespace)
            .into_iter()
            .flat_map(|docs| docs.values())
    }

    /// Documents ranked by how many distinct query tokens their body contains.
    /// Ties go to the smaller key; zero-overlap documents are excluded.
    pub fn search(
        &self,
        namespace: Namespace,
        query: &str,
        limit: usize,
    ) -> Vec<(&Document, usize)> {
        assert!(limit >= 1, "search limit must be at least 1");
        let mut terms: Vec<String> = tokenize(query).collect();
        terms.sort();
        terms.dedup();

        let mut scored: Vec<(&Document, usize)> = self
            .documents(namespace)
            .filter_map(|doc| {
                let tokens = doc.tokens();
                let score = terms.iter().filter(|t| tokens.contains(t)).count();
                (score > 0).then_some((doc, score))
            })
            .collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.key.cmp(&b.0.key)));
        scored.truncate(limit);
        scored
    }
}
