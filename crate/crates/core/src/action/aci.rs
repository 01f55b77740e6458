//! Placeholder abstraction for token-heavy spans.
//!
//! Long URLs are swapped for compact tokens such as `[Image 1]` before text
//! reaches the planner, and swapped back (or resolved into a short
//! description) when the agent acts on them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{LongTermStore, Namespace};
use crate::mllm::{MllmError, VisualBackend, VisualDescription, VisualQuery};

/// Instruction used when a resolve call does not supply one.
pub const DEFAULT_INSTRUCTION: &str = "Describe the image";

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"https?://[^\s<>"'()\[\]{}]+"#).expect("valid regex"));
static PLACEHOLDER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[(Image|Product|Order|Video|Link) ([1-9][0-9]*)\]").expect("valid regex")
});

/// True when `s` is exactly one placeholder token.
pub fn is_placeholder(s: &str) -> bool {
    PLACEHOLDER_RE
        .find(s)
        .is_some_and(|m| m.start() == 0 && m.end() == s.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceholderKind {
    Image,
    Product,
    Order,
    Video,
    Other,
}

impl PlaceholderKind {
    /// Name used inside the placeholder token.
    pub fn token_name(&self) -> &'static str {
        match self {
            PlaceholderKind::Image => "Image",
            PlaceholderKind::Product => "Product",
            PlaceholderKind::Order => "Order",
            PlaceholderKind::Video => "Video",
            PlaceholderKind::Other => "Link",
        }
    }

    pub fn is_visual(&self) -> bool {
        matches!(self, PlaceholderKind::Image | PlaceholderKind::Video)
    }
}

impl fmt::Display for PlaceholderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternRule {
    /// Path (without query) ends with one of the suffixes, case-insensitive.
    PathSuffix(Vec<String>),
    PathContains(Vec<String>),
    HostContains(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindPattern {
    pub kind: PlaceholderKind,
    pub rule: PatternRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AciConfig {
    #[serde(default = "default_min_len")]
    pub min_url_len: usize,
    /// First matching pattern wins; no match classifies as `Other`.
    #[serde(default = "default_patterns")]
    pub patterns: Vec<KindPattern>,
}

fn default_min_len() -> usize {
    24
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn default_patterns() -> Vec<KindPattern> {
    vec![
        KindPattern {
            kind: PlaceholderKind::Image,
            rule: PatternRule::PathSuffix(strings(&[".jpg", ".jpeg", ".png", ".webp", ".gif"])),
        },
        KindPattern {
            kind: PlaceholderKind::Order,
            rule: PatternRule::PathContains(strings(&["/order/"])),
        },
        KindPattern {
            kind: PlaceholderKind::Product,
            rule: PatternRule::PathContains(strings(&["/item/", "/product/"])),
        },
        KindPattern {
            kind: PlaceholderKind::Video,
            rule: PatternRule::PathSuffix(strings(&[".mp4", ".mov"])),
        },
        KindPattern {
            kind: PlaceholderKind::Video,
            rule: PatternRule::HostContains(strings(&["video"])),
        },
    ]
}

impl Default for AciConfig {
    fn default() -> Self {
        Self {
            min_url_len: default_min_len(),
            patterns: default_patterns(),
        }
    }
}

impl AciConfig {
    pub fn classify(&self, url: &url::Url) -> PlaceholderKind {
        let path = url.path().to_lowercase();
        let host = url.host_str().unwrap_or_default().to_lowercase();
        self.patterns
            .iter()
            .find(|p| match &p.rule {
                PatternRule::PathSuffix(s) => s.iter().any(|x| path.ends_with(&x.to_lowercase())),
                PatternRule::PathContains(s) => s.iter().any(|x| path.contains(&x.to_lowercase())),
                PatternRule::HostContains(s) => s.iter().any(|x| host.contains(&x.to_lowercase())),
            })
            .map_or(PlaceholderKind::Other, |p| p.kind)
    }

    /// URL spans in `text` that qualify for abstraction, with their kinds.
    pub fn qualifying_urls<'t>(
        &self,
        text: &'t str,
    ) -> Vec<(std::ops::Range<usize>, &'t str, PlaceholderKind)> {
        URL_RE
            .find_iter(text)
            .filter_map(|m| {
                let raw = m.as_str().trim_end_matches(['.', ',', ';', ':', '!', '?']);
                if raw.chars().count() < self.min_url_len {
                    return None;
                }
                let parsed = url::Url::parse(raw).ok()?;
                parsed.host_str()?;
                Some((
                    m.start()..m.start() + raw.len(),
                    raw,
                    self.classify(&parsed),
                ))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderEntry {
    pub placeholder: String,
    pub original: String,
    pub kind: PlaceholderKind,
    /// Cached resolutions keyed by instruction.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub descriptions: BTreeMap<String, String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AciError {
    #[error("unknown_placeholder: {0}")]
    UnknownPlaceholder(String),
    #[error("unresolvable placeholder {placeholder}: {reason}")]
    Unresolvable { placeholder: String, reason: String },
    #[error("resolution error for {placeholder}: {source}")]
    Visual {
        placeholder: String,
        #[source]
        source: MllmError,
    },
}

/// Result of [`PlaceholderTable::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub text: String,
    pub cached: bool,
    /// Present when the visual backend was actually called.
    pub described: Option<VisualDescription>,
}

/// Per-session bidirectional map between originals and placeholders.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderTable {
    entries: Vec<PlaceholderEntry>,
}

impl PlaceholderTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[PlaceholderEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, placeholder: &str) -> Option<&PlaceholderEntry> {
        self.entries.iter().find(|e| e.placeholder == placeholder)
    }

    pub fn by_original(&self, original: &str) -> Option<&PlaceholderEntry> {
        self.entries.iter().find(|e| e.original == original)
    }

    fn intern(&mut self, original: &str, kind: PlaceholderKind) -> &str {
        if let Some(i) = self.entries.iter().position(|e| e.original == original) {
            return &self.entries[i].placeholder;
        }
        let n = self.entries.iter().filter(|e| e.kind == kind).count() + 1;
        self.entries.push(PlaceholderEntry {
            placeholder: format!("[{} {n}]", kind.token_name()),
            original: original.to_string(),
            kind,
            descriptions: BTreeMap::new(),
        });
        &self.entries.last().expect("just pushed").placeholder
    }

    /// Replaces every qualifying URL in `text` with its placeholder.
    pub fn abstract_text(&mut self, text: &str, config: &AciConfig) -> String {
        self.abstract_where(text, config, |_| true)
    }

    /// Like [`abstract_text`](Self::abstract_text), but only URLs whose kind
    /// satisfies `keep` are replaced; the rest pass through verbatim.
    pub fn abstract_where(
        &mut self,
        text: &str,
        config: &AciConfig,
        keep: impl Fn(PlaceholderKind) -> bool,
    ) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for (range, url, kind) in config.qualifying_urls(text) {
            if !keep(kind) {
                continue;
            }
            out.push_str(&text[last..range.start]);
            out.push_str(self.intern(url, kind));
            last = range.end;
        }
        out.push_str(&text[last..]);
        out
    }

    /// Replaces known placeholders with their originals. Unknown
    /// placeholders stay verbatim and are returned as warnings.
    pub fn deabstract(&self, text: &str) -> (String, Vec<String>) {
        let mut warnings = Vec::new();
        let out = PLACEHOLDER_RE.replace_all(text, |caps: &regex::Captures<'_>| {
            let token = &caps[0];
            match self.get(token) {
                Some(entry) => entry.original.clone(),
                None => {
                    warnings.push(token.to_string());
                    token.to_string()
                }
            }
        });
        (out.into_owned(), warnings)
    }

    /// Placeholder tokens mentioned in `text` that this table does not know.
    pub fn unknown_placeholders(&self, text: &str) -> Vec<String> {
        self.deabstract(text).1
    }

    /// Turns a placeholder into a short description.
    ///
    /// Image and video entries go to the visual backend with `instruction`
    /// (or [`DEFAULT_INSTRUCTION`]); product and order entries are looked up
    /// in long-term memory by the key embedded in the URL. Results are cached
    /// per `(placeholder, instruction)`.
    pub fn resolve(
        &mut self,
        placeholder: &str,
        instruction: Option<&str>,
        visual: &dyn VisualBackend,
        ltm: &LongTermStore,
    ) -> Result<Resolution, AciError> {
        let instruction = instruction
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .unwrap_or(DEFAULT_INSTRUCTION)
            .to_string();
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.placeholder == placeholder)
            .ok_or_else(|| AciError::UnknownPlaceholder(placeholder.to_string()))?;
        if let Some(text) = entry.descriptions.get(&instruction) {
            return Ok(Resolution {
                text: text.clone(),
                cached: true,
                described: None,
            });
        }

        let unresolvable = |reason: String| AciError::Unresolvable {
            placeholder: placeholder.to_string(),
            reason,
        };
        let (text, described) = match entry.kind {
            PlaceholderKind::Image | PlaceholderKind::Video => {
                let query = VisualQuery {
                    instruction: instruction.clone(),
                    asset_id: entry.original.clone(),
                };
                let desc = visual.describe(&query).map_err(|source| AciError::Visual {
                    placeholder: placeholder.to_string(),
                    source,
                })?;
                (desc.text.clone(), Some(desc))
            }
            PlaceholderKind::Product | PlaceholderKind::Order => {
                let (namespace, markers) = if entry.kind == PlaceholderKind::Order {
                    (Namespace::Order, &["order"][..])
                } else {
                    (Namespace::Product, &["item", "product"][..])
                };
                let key = extract_key(&entry.original, markers)
                    .ok_or_else(|| unresolvable("no key in URL".to_string()))?;
                let doc = ltm
                    .get(namespace, &key)
                    .ok_or_else(|| unresolvable(format!("{namespace} `{key}` not found")))?;
                (serde_json::to_string(&doc.body).expect("json body"), None)
            }
            PlaceholderKind::Other => {
                return Err(unresolvable("links have no resolver".to_string()));
            }
        };
        entry.descriptions.insert(instruction, text.clone());
        Ok(Resolution {
            text,
            cached: false,
            described,
        })
    }
}

/// Path segment following one of `markers`, without any file extension.
pub fn extract_key(original: &str, markers: &[&str]) -> Option<String> {
    let url = url::Url::parse(original).ok()?;
    let segments: Vec<&str> = url.path_segments()?.collect();
    let pos = segments
        .iter()
        .position(|s| markers.iter().any(|m| s.eq_ignore_ascii_case(m)))?;
    let key = segments.get(pos + 1)?;
    let key = key.split('.').next().unwrap_or(key);
    (!key.is_empty()).then(|| key.to_string())
}

/// Key for product/order placeholders, used when a whole tool argument is a placeholder.
pub fn entry_key(entry: &PlaceholderEntry) -> Option<String> {
    match entry.kind {
        PlaceholderKind::Order => extract_key(&entry.original, &["order"]),
        PlaceholderKind::Product => extract_key(&entry.original, &["item", "product"]),
        _ => None,
    }
}

impl FromStr for PlaceholderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Image" | "image" => Ok(PlaceholderKind::Image),
            "Product" | "product" => Ok(PlaceholderKind::Product),
            "Order" | "order" => Ok(PlaceholderKind::Order),
            "Video" | "video" => Ok(PlaceholderKind::Video),
            "Link" | "link" | "other" => Ok(PlaceholderKind::Other),
            other => Err(format!("unknown placeholder kind `{other}`")),
        }
    }
}
