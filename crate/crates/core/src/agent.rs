//! The agent loop: buyer turn in, decision rounds and tool calls, reply out.
//!
//! The raw transcript lives in one [`WorkingMemory`]; a second, planner-facing
//! view holds the same turns after placeholder abstraction. Which view the
//! planner sees, and whether images reach it raw or as placeholders, is set by
//! [`AgentConfig::aci`] and [`AgentConfig::strategy`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::action::aci::{entry_key, is_placeholder, AciConfig, PlaceholderKind, PlaceholderTable};
use crate::action::{ActionContext, ToolCall, ToolRegistry};
use crate::decision::{
    self, CandidatePlan, DecisionError, PlanKind, PromptInput, Sampling, Templates,
};
use crate::llm::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::memory::{ContentPart, LongTermStore, Message, PartKind, Role, WorkingMemory};
use crate::mllm::{Strategy, VisualBackend};
use crate::simenv::World;
use crate::trace::{ActionTrace, LlmPurpose, TraceEvent};
use crate::{Confidence, Millis};

/// How episode wall time is reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LatencyModel {
    /// Real elapsed time.
    Measured,
    /// `ms_per_prompt_char * prompt_chars + ms_per_call * backend_calls`.
    Simulated {
        ms_per_prompt_char: f64,
        ms_per_call: f64,
    },
}

impl LatencyModel {
    pub fn simulated_default() -> Self {
        LatencyModel::Simulated {
            ms_per_prompt_char: 0.05,
            ms_per_call: 250.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub n_candidates: usize,
    pub confidence_floor: Confidence,
    /// Off: the first proposed plan runs, with no evaluation or selection.
    pub decision_module: bool,
    /// Off: the planner sees raw URLs.
    pub aci: bool,
    pub strategy: Strategy,
    pub context_budget: usize,
    /// Decision rounds allowed per buyer turn before the fallback reply.
    pub max_rounds_per_turn: usize,
    pub sampling: Sampling,
    pub aci_config: AciConfig,
    pub latency: LatencyModel,
    pub clarification_reply: String,
    pub fallback_reply: String,
    #[serde(skip)]
    pub templates: Templates,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n_candidates: 3,
            confidence_floor: 0.0,
            decision_module: true,
            aci: true,
            strategy: Strategy::Tool,
            context_budget: 12_000,
            max_rounds_per_turn: 4,
            sampling: Sampling::default(),
            aci_config: AciConfig::default(),
            latency: LatencyModel::Measured,
            clarification_reply: "Sorry, could you tell me a bit more about what you need?".into(),
            fallback_reply: "Let me check on this and get back to you shortly.".into(),
            templates: Templates::default(),
        }
    }
}

/// Everything a tool handler may touch during one session.
pub struct Session {
    pub world: World,
    pub ltm: LongTermStore,
    pub table: PlaceholderTable,
    pub trace: ActionTrace,
    pub visual: Arc<dyn VisualBackend>,
    pub aci: AciConfig,
}

impl ActionContext for Session {
    fn trace_mut(&mut self) -> &mut ActionTrace {
        &mut self.trace
    }
}

/// Running totals for model usage within a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionUsage {
    pub prompt_chars: u64,
    pub completion_chars: u64,
    pub chat_calls: u64,
}

/// Backend wrapper that logs every exchange into the trace.
struct Logged<'a> {
    inner: &'a mut dyn ChatBackend,
    trace: &'a mut ActionTrace,
    usage: &'a mut SessionUsage,
    purpose: LlmPurpose,
}

impl ChatBackend for Logged<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let result = self.inner.complete(request);
        self.usage.chat_calls += 1;
        let (response, error) = match &result {
            Ok(r) => {
                self.usage.prompt_chars += r.usage.prompt_chars;
                self.usage.completion_chars += r.usage.completion_chars;
                (Some(r.text.clone()), None)
            }
            Err(e) => (None, Some(e.to_string())),
        };
        self.trace.push(TraceEvent::Llm {
            purpose: self.purpose,
            request: request.clone(),
            response,
            error,
        });
        result
    }
}

/// What the agent did with one buyer turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub reply: Option<String>,
    /// Set when the backend failed and the session cannot continue.
    pub fatal: Option<String>,
}

enum RoundResult {
    Reply(String),
    Continue,
}

pub struct Agent<'a> {
    config: &'a AgentConfig,
    registry: &'a ToolRegistry<Session>,
    backend: &'a mut dyn ChatBackend,
    session: Session,
    transcript: WorkingMemory,
    view: WorkingMemory,
    shown: usize,
    usage: SessionUsage,
    next_call: usize,
}

impl<'a> Agent<'a> {
    pub fn new(
        session_id: &str,
        config: &'a AgentConfig,
        registry: &'a ToolRegistry<Session>,
        backend: &'a mut dyn ChatBackend,
        world: World,
        visual: Arc<dyn VisualBackend>,
    ) -> Self {
        let ltm = world.to_store();
        Self {
            config,
            registry,
            backend,
            session: Session {
                world,
                ltm,
                table: PlaceholderTable::new(),
                trace: ActionTrace::new(),
                visual,
                aci: config.aci_config.clone(),
            },
            transcript: WorkingMemory::new(session_id),
            view: WorkingMemory::new(session_id),
            shown: 0,
            usage: SessionUsage::default(),
            next_call: 0,
        }
    }

    pub fn transcript(&self) -> &WorkingMemory {
        &self.transcript
    }

    /// The transcript as the planner sees it.
    pub fn planner_view(&self) -> &WorkingMemory {
        &self.view
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn usage(&self) -> SessionUsage {
        self.usage
    }

    pub fn into_parts(self) -> (WorkingMemory, Session, SessionUsage) {
        (self.transcript, self.session, self.usage)
    }

    /// Splits a buyer utterance into text and image-reference parts.
    fn buyer_parts(&self, utterance: &str) -> Vec<ContentPart> {
        let mut parts = Vec::new();
        let mut last = 0;
        for (range, url, kind) in self.config.aci_config.qualifying_urls(utterance) {
            if kind != PlaceholderKind::Image {
                continue;
            }
            push_text(&mut parts, &utterance[last..range.start]);
            parts.push(ContentPart::image_ref(url).expect("qualifying URLs parse"));
            last = range.end;
        }
        push_text(&mut parts, &utterance[last..]);
        if parts.is_empty() {
            parts.push(ContentPart::text(""));
        }
        parts
    }

    /// Planner-facing copy of a part. The placeholder table is updated in
    /// every configuration so tool arguments can always be resolved.
    fn view_part(&mut self, part: &ContentPart) -> ContentPart {
        let planner = self.config.strategy == Strategy::Planner;
        let keep = move |k: PlaceholderKind| !(planner && k.is_visual());
        let table = &mut self.session.table;
        match part.kind {
            PartKind::Text => {
                let abstracted = table.abstract_where(&part.value, &self.config.aci_config, keep);
                if self.config.aci {
                    ContentPart::text(abstracted)
                } else {
                    part.clone()
                }
            }
            PartKind::ImageRef if !planner => {
                let token = table.abstract_text(&part.value, &self.config.aci_config);
                if self.config.aci && is_placeholder(&token) {
                    ContentPart::placeholder(token).expect("table emits valid placeholders")
                } else {
                    part.clone()
                }
            }
            _ => part.clone(),
        }
    }

    fn append(&mut self, role: Role, parts: Vec<ContentPart>) {
        let view_parts: Vec<ContentPart> = parts.iter().map(|p| self.view_part(p)).collect();
        let tick = self.session.world.clock;
        let idx = self.transcript.next_index();
        self.transcript
            .append_turn(Message::new(role, parts, idx, tick))
            .expect("agent appends in sequence");
        self.view
            .append_turn(Message::new(role, view_parts, idx, tick))
            .expect("agent appends in sequence");
    }

    pub fn handle_buyer_turn(&mut self, utterance: &str) -> TurnOutcome {
        self.session.world.clock += 1;
        self.session.ltm.advance_to(self.session.world.clock);
        let parts = self.buyer_parts(utterance);
        self.append(Role::Buyer, parts);

        let mut reprompted = false;
        for _ in 0..self.config.max_rounds_per_turn.max(1) {
            match self.round() {
                Ok(RoundResult::Continue) => continue,
                Ok(RoundResult::Reply(draft)) => {
                    let unknown = self.session.table.unknown_placeholders(&draft);
                    if !unknown.is_empty() && !reprompted {
                        reprompted = true;
                        let note = format!(
                            "internal: unknown placeholder(s) {}; use only placeholders that appear in the conversation",
                            unknown.join(", ")
                        );
                        self.session.trace.note(note.clone());
                        self.append(Role::System, vec![ContentPart::text(note)]);
                        continue;
                    }
                    return self.reply(&draft);
                }
                Err(DecisionError::Backend(e)) => {
                    let message = format!("backend error: {e}");
                    self.session.trace.note(message.clone());
                    return TurnOutcome {
                        reply: None,
                        fatal: Some(message),
                    };
                }
                Err(e) => {
                    self.session.trace.note(format!("decision error: {e}"));
                    let fallback = self.config.fallback_reply.clone();
                    return self.reply(&fallback);
                }
            }
        }
        self.session.trace.note("round limit reached for this turn");
        let fallback = self.config.fallback_reply.clone();
        self.reply(&fallback)
    }

    fn reply(&mut self, draft: &str) -> TurnOutcome {
        let (text, warnings) = self.session.table.deabstract(draft);
        if !warnings.is_empty() {
            self.session.trace.note(format!(
                "reply kept unknown placeholder(s): {}",
                warnings.join(", ")
            ));
        }
        self.append(Role::Agent, vec![ContentPart::text(text.clone())]);
        TurnOutcome {
            reply: Some(text),
            fatal: None,
        }
    }

    fn prompt_material(&mut self) -> (String, String, Vec<String>) {
        let context = self.view.render_context(self.config.context_budget);
        let fresh = &self.view.turns()[self.shown..];
        let latest: String = fresh.iter().map(Message::render).collect();
        let images = if self.config.strategy == Strategy::Planner {
            fresh
                .iter()
                .flat_map(|m| &m.parts)
                .filter(|p| p.kind == PartKind::ImageRef)
                .map(|p| p.value.clone())
                .collect()
        } else {
            Vec::new()
        };
        self.shown = self.view.len();
        (context, latest, images)
    }

    fn catalog(&self) -> Vec<crate::action::ToolDescriptor> {
        self.registry.catalog()
    }

    /// One propose / evaluate / select round, then execution of the chosen plan.
    fn round(&mut self) -> Result<RoundResult, DecisionError> {
        let (context, latest, images) = self.prompt_material();
        let input = PromptInput {
            context: &context,
            latest: &latest,
            images: &images,
        };
        let catalog = self.catalog();
        let config = self.config;

        let plans = {
            let mut logged = Logged {
                inner: &mut *self.backend,
                trace: &mut self.session.trace,
                usage: &mut self.usage,
                purpose: LlmPurpose::Propose,
            };
            decision::propose(
                &mut logged,
                &config.templates,
                &input,
                &catalog,
                config.n_candidates,
                &config.sampling,
            )?
        };

        let (chosen, decision) = if config.decision_module {
            let evaluations = {
                let mut logged = Logged {
                    inner: &mut *self.backend,
                    trace: &mut self.session.trace,
                    usage: &mut self.usage,
                    purpose: LlmPurpose::Evaluate,
                };
                decision::evaluate(
                    &mut logged,
                    &config.templates,
                    &input,
                    &plans,
                    &config.sampling,
                )?
            };
            let decision = decision::select(&evaluations, config.confidence_floor)?;
            (decision.selected, Some(decision))
        } else {
            (Some(plans[0].plan_id), None)
        };
        self.session.trace.push(TraceEvent::Decision {
            plans: plans.clone(),
            decision,
            executed: chosen,
        });

        let Some(chosen) = chosen else {
            return Ok(RoundResult::Reply(config.clarification_reply.clone()));
        };
        let plan = plans
            .into_iter()
            .find(|p| p.plan_id == chosen)
            .expect("selected plan exists");
        Ok(self.execute(plan))
    }

    fn execute(&mut self, plan: CandidatePlan) -> RoundResult {
        if plan.kind == PlanKind::DirectReply {
            return RoundResult::Reply(plan.draft_reply.unwrap_or_default());
        }
        for step in plan.steps {
            let call = ToolCall {
                call_id: format!("call-{}", self.next_call),
                arguments: self.prepare_arguments(&step.tool, step.arguments),
                tool: step.tool,
            };
            self.next_call += 1;
            let result = self.registry.invoke(&call, &mut self.session);
            let text = format!("tool[{}]: {}", call.tool, result.text());
            self.append(Role::Tool, vec![ContentPart::text(text)]);
            if result.is_error {
                break;
            }
        }
        RoundResult::Continue
    }

    /// Placeholders in arguments become originals before a tool runs; an
    /// argument that is exactly an order/product placeholder becomes its key.
    /// `multimodal_describe` receives its arguments untouched.
    fn prepare_arguments(&self, tool: &str, arguments: Value) -> Value {
        if tool == crate::simenv::tools::MULTIMODAL_DESCRIBE {
            return arguments;
        }
        let table = &self.session.table;
        let Value::Object(map) = arguments else {
            return arguments;
        };
        Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let v = match v {
                        Value::String(s) => {
                            let keyed = table.get(&s).and_then(entry_key);
                            Value::String(keyed.unwrap_or_else(|| table.deabstract(&s).0))
                        }
                        other => other,
                    };
                    (k, v)
                })
                .collect(),
        )
    }
}

fn push_text(parts: &mut Vec<ContentPart>, text: &str) {
    let trimmed = text.trim();
    if !trimmed.is_empty() {
        parts.push(ContentPart::text(trimmed));
    }
}

/// Surrogate or measured episode duration.
pub fn episode_millis(
    latency: &LatencyModel,
    measured: Millis,
    prompt_chars: u64,
    backend_calls: u64,
) -> Millis {
    match *latency {
        LatencyModel::Measured => measured,
        LatencyModel::Simulated {
            ms_per_prompt_char,
            ms_per_call,
        } => ms_per_prompt_char * prompt_chars as f64 + ms_per_call * backend_calls as f64,
    }
}
