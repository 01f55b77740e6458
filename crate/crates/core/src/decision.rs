//! Propose-Evaluate-Select.
//!
//! The backend proposes candidate plans as a fenced JSON block, then scores
//! them as a single-token classification over labels `A..Z`. Confidence
//! comes from per-label probabilities when the backend exposes them, else
//! from the vote fraction of repeated single-label samples. Selection is a
//! deterministic argmax with ties to the smallest plan id.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action::ToolDescriptor;
use crate::llm::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::Confidence;

/// Maximum number of plans one evaluation round can label.
pub const MAX_PLANS: usize = 26;
/// Extra attempts per vote when the backend answers with a non-label.
pub const LABEL_RETRIES: usize = 2;
pub const LOW_CONFIDENCE: &str = "low_confidence";

static FENCE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```(?:json|JSON)?[ \t]*\r?\n(.*?)```").expect("valid regex"));

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("proposal error: {0}")]
    Proposal(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("usage error: {0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    ToolSequence,
    SingleTool,
    DirectReply,
}

impl PlanKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanKind::ToolSequence => "tool_sequence",
            PlanKind::SingleTool => "single_tool",
            PlanKind::DirectReply => "direct_reply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub tool: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    pub plan_id: usize,
    pub kind: PlanKind,
    #[serde(default)]
    pub steps: Vec<PlannedStep>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft_reply: Option<String>,
}

impl CandidatePlan {
    fn dedup_key(&self) -> (PlanKind, Vec<String>) {
        (
            self.kind,
            self.steps.iter().map(|s| s.tool.clone()).collect(),
        )
    }

    /// One-line rendering used in the evaluation prompt.
    pub fn render(&self) -> String {
        let body = match self.kind {
            PlanKind::DirectReply => format!(
                "reply {:?}",
                self.draft_reply.as_deref().unwrap_or_default()
            ),
            _ => self
                .steps
                .iter()
                .map(|s| format!("{} {}", s.tool, s.arguments))
                .collect::<Vec<_>>()
                .join(" -> "),
        };
        format!(
            "[{}] {} | rationale: {}",
            self.kind.as_str(),
            body,
            self.rationale
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub plan_id: usize,
    pub label: char,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub selected: Option<usize>,
    pub evaluations: Vec<PlanEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_reason: Option<String>,
}

/// Prompt templates with named slots `{tool_catalog}`, `{n_candidates}`,
/// `{context}`, `{latest}` and `{plan_list}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub propose: String,
    pub context: String,
    pub observation: String,
    pub evaluate: String,
    pub plans: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            propose: include_str!("../templates/propose.txt").to_string(),
            context: include_str!("../templates/context.txt").to_string(),
            observation: include_str!("../templates/observation.txt").to_string(),
            evaluate: include_str!("../templates/evaluate.txt").to_string(),
            plans: include_str!("../templates/plans.txt").to_string(),
        }
    }
}

impl Templates {
    /// Defaults, with any `<name>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("propose", &mut t.propose),
            ("context", &mut t.context),
            ("observation", &mut t.observation),
            ("evaluate", &mut t.evaluate),
            ("plans", &mut t.plans),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    slots.iter().fold(template.to_string(), |acc, (k, v)| {
        acc.replace(&format!("{{{k}}}"), v)
    })
}

pub fn render_catalog(catalog: &[ToolDescriptor]) -> String {
    catalog
        .iter()
        .map(|t| {
            let schema = serde_json::to_string(&t.input_schema).expect("schema serializes");
            format!("- {}: {} input_schema={}", t.name, t.description, schema)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// What the planner sees this round.
#[derive(Debug, Clone, Copy)]
pub struct PromptInput<'a> {
    /// Rendered working memory.
    pub context: &'a str,
    /// Turns added since the previous decision round.
    pub latest: &'a str,
    /// Raw image references attached to the newest message (planner strategy only).
    pub images: &'a [String],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub max_tokens: u32,
    pub temperature: f64,
    /// Temperature used for vote samples when label probabilities are missing.
    pub vote_temperature: f64,
    pub vote_samples: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            max_tokens: 1024,
            temperature: 0.0,
            vote_temperature: 0.7,
            vote_samples: 5,
        }
    }
}

pub fn propose_request(
    templates: &Templates,
    input: &PromptInput<'_>,
    catalog: &[ToolDescriptor],
    n_candidates: usize,
    sampling: &Sampling,
) -> ChatRequest {
    let system = fill(
        &templates.propose,
        &[
            ("tool_catalog", &render_catalog(catalog)),
            ("n_candidates", &n_candidates.to_string()),
        ],
    );
    let mut request = ChatRequest::new(vec![
        ChatMessage::system(system),
        ChatMessage::user(fill(&templates.context, &[("context", input.context)])),
        ChatMessage::user(fill(&templates.observation, &[("latest", input.latest)]))
            .with_images(input.images.to_vec()),
    ]);
    request.max_tokens = sampling.max_tokens;
    request.temperature = sampling.temperature;
    request
}

pub fn propose(
    backend: &mut dyn ChatBackend,
    templates: &Templates,
    input: &PromptInput<'_>,
    catalog: &[ToolDescriptor],
    n_candidates: usize,
    sampling: &Sampling,
) -> Result<Vec<CandidatePlan>, DecisionError> {
    if n_candidates == 0 {
        return Err(DecisionError::Precondition(
            "n_candidates must be at least 1".into(),
        ));
    }
    let request = propose_request(templates, input, catalog, n_candidates, sampling);
    let response = backend.complete(&request)?;
    parse_plans(&response.text, n_candidates)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanBlock {
    Wrapped { plans: Vec<Value> },
    Bare(Vec<Value>),
}

#[derive(Deserialize)]
struct RawPlan {
    kind: PlanKind,
    #[serde(default)]
    steps: Vec<PlannedStep>,
    #[serde(default)]
    rationale: String,
    #[serde(default)]
    draft_reply: Option<String>,
}

fn validate_plan(raw: RawPlan) -> Option<CandidatePlan> {
    let steps_ok = raw
        .steps
        .iter()
        .all(|s| !s.tool.trim().is_empty() && s.arguments.is_object());
    let shape_ok = match raw.kind {
        PlanKind::DirectReply => {
            raw.steps.is_empty()
                && raw
                    .draft_reply
                    .as_deref()
                    .is_some_and(|r| !r.trim().is_empty())
        }
        PlanKind::SingleTool => raw.steps.len() == 1,
        PlanKind::ToolSequence => !raw.steps.is_empty(),
    };
    (steps_ok && shape_ok).then(|| CandidatePlan {
        plan_id: 0,
        kind: raw.kind,
        draft_reply: if raw.kind == PlanKind::DirectReply {
            raw.draft_reply
        } else {
            None
        },
        steps: raw.steps,
        rationale: raw.rationale,
    })
}

/// Parses the first fenced JSON block of a proposal reply. Malformed plans
/// are dropped; duplicates by `(kind, tool names)` keep their first
/// occurrence; at most `n_candidates` survive, numbered densely from 0.
pub fn parse_plans(text: &str, n_candidates: usize) -> Result<Vec<CandidatePlan>, DecisionError> {
    let block = FENCE_RE
        .captures(text)
        .map(|c| c[1].to_string())
        .ok_or_else(|| DecisionError::Proposal("reply contains no fenced JSON block".into()))?;
    let parsed: PlanBlock = serde_json::from_str(&block)
        .map_err(|e| DecisionError::Proposal(format!("fenced block is not a plan list: {e}")))?;
    let entries = match parsed {
        PlanBlock::Wrapped { plans } => plans,
        PlanBlock::Bare(plans) => plans,
    };

    let mut seen = HashSet::new();
    let mut plans = Vec::new();
    for entry in entries {
        let Some(plan) = serde_json::from_value::<RawPlan>(entry)
            .ok()
            .and_then(validate_plan)
        else {
            continue;
        };
        if seen.insert(plan.dedup_key()) {
            plans.push(plan);
        }
    }
    if plans.is_empty() {
        return Err(DecisionError::Proposal(
            "no parseable plans in reply".into(),
        ));
    }
    plans.truncate(n_candidates);
    for (i, p) in plans.iter_mut().enumerate() {
        p.plan_id = i;
    }
    Ok(plans)
}

pub fn label_for(index: usize) -> char {
    (b'A' + index as u8) as char
}

pub fn evaluate_request(
    templates: &Templates,
    input: &PromptInput<'_>,
    plans: &[CandidatePlan],
    sampling: &Sampling,
) -> ChatRequest {
    let plan_list = plans
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {}", label_for(i), p.render()))
        .collect::<Vec<_>>()
        .join("\n");
    let mut request = ChatRequest::new(vec![
        ChatMessage::system(templates.evaluate.clone()),
        ChatMessage::user(fill(&templates.context, &[("context", input.context)]))
            .with_images(input.images.to_vec()),
        ChatMessage::user(fill(&templates.plans, &[("plan_list", &plan_list)])),
    ]);
    request.max_tokens = 1;
    request.temperature = sampling.temperature;
    request.label_alphabet = Some((0..plans.len()).map(|i| label_for(i).to_string()).collect());
    request
}

fn parse_label(text: &str, n: usize) -> Option<usize> {
    let cleaned = text.trim().trim_matches(|c: char| !c.is_alphanumeric());
    let mut chars = cleaned.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_uppercase() {
        return None;
    }
    let idx = (c as u8 - b'A') as usize;
    (idx < n).then_some(idx)
}

/// Scores every plan with a confidence in `[0, 1]`.
pub fn evaluate(
    backend: &mut dyn ChatBackend,
    templates: &Templates,
    input: &PromptInput<'_>,
    plans: &[CandidatePlan],
    sampling: &Sampling,
) -> Result<Vec<PlanEvaluation>, DecisionError> {
    if plans.is_empty() {
        return Err(DecisionError::Precondition("no plans to evaluate".into()));
    }
    if plans.len() > MAX_PLANS {
        return Err(DecisionError::Precondition(format!(
            "{} plans exceed the {MAX_PLANS}-label alphabet",
            plans.len()
        )));
    }
    let request = evaluate_request(templates, input, plans, sampling);
    let first = backend.complete(&request)?;

    let probs = first
        .label_probs
        .as_ref()
        .filter(|p| p.values().sum::<f64>() > 0.0);
    if let Some(probs) = probs {
        return Ok(confidences_from_probs(plans, probs));
    }

    let samples = sampling.vote_samples.max(1);
    let mut vote_request = request.clone();
    vote_request.temperature = sampling.vote_temperature;
    let mut votes = vec![0usize; plans.len()];
    let mut pending = Some(first.text);
    for _ in 0..samples {
        let mut label = None;
        for _ in 0..=LABEL_RETRIES {
            let text = match pending.take() {
                Some(t) => t,
                None => backend.complete(&vote_request)?.text,
            };
            label = parse_label(&text, plans.len());
            if label.is_some() {
                break;
            }
        }
        let label = label.ok_or_else(|| {
            DecisionError::Evaluation(format!(
                "backend returned no valid label after {LABEL_RETRIES} retries"
            ))
        })?;
        votes[label] += 1;
    }
    Ok(plans
        .iter()
        .enumerate()
        .map(|(i, p)| PlanEvaluation {
            plan_id: p.plan_id,
            label: label_for(i),
            confidence: votes[i] as Confidence / samples as Confidence,
        })
        .collect())
}

fn confidences_from_probs(
    plans: &[CandidatePlan],
    probs: &BTreeMap<String, f64>,
) -> Vec<PlanEvaluation> {
    let labels: Vec<String> = (0..plans.len()).map(|i| label_for(i).to_string()).collect();
    let total: f64 = labels.iter().filter_map(|l| probs.get(l)).sum();
    plans
        .iter()
        .enumerate()
        .map(|(i, p)| PlanEvaluation {
            plan_id: p.plan_id,
            label: label_for(i),
            confidence: (probs.get(&labels[i]).copied().unwrap_or(0.0) / total).clamp(0.0, 1.0),
        })
        .collect()
}

/// Argmax over confidence, ties to the smallest plan id. Below
/// `confidence_floor` the decision is rejected with [`LOW_CONFIDENCE`].
pub fn select(
    evaluations: &[PlanEvaluation],
    confidence_floor: Confidence,
) -> Result<Decision, DecisionError> {
    let best = evaluations
        .iter()
        .max_by(|a, b| {
            a.confidence
                .total_cmp(&b.confidence)
                .then_with(|| b.plan_id.cmp(&a.plan_id))
        })
        .ok_or_else(|| DecisionError::Usage("select needs at least one evaluation".into()))?;
    let rejected = best.confidence < confidence_floor;
    Ok(Decision {
        selected: (!rejected).then_some(best.plan_id),
        evaluations: evaluations.to_vec(),
        rejected_reason: rejected.then(|| LOW_CONFIDENCE.to_string()),
    })
}
