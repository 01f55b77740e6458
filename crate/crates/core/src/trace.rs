//! Per-session action trace: every tool call, describe call, planner
//! exchange, decision and world mutation, in order.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action::{ToolCall, ToolResult};
use crate::decision::{CandidatePlan, Decision};
use crate::llm::ChatRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmPurpose {
    Propose,
    Evaluate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Llm {
        purpose: LlmPurpose,
        request: ChatRequest,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Decision {
        plans: Vec<CandidatePlan>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decision: Option<Decision>,
        /// Plan executed this round, if any.
        executed: Option<usize>,
    },
    ToolCall {
        call: ToolCall,
        result: ToolResult,
        internal: bool,
    },
    Describe {
        placeholder: Option<String>,
        asset_id: String,
        instruction: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        backend_id: String,
        cached: bool,
    },
    WorldMutation {
        order_id: String,
        action: String,
        from: String,
        to: String,
        tick: u64,
    },
    Note {
        message: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionTrace {
    events: Vec<TraceEvent>,
}

impl ActionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn note(&mut self, message: impl Into<String>) {
        self.push(TraceEvent::Note {
            message: message.into(),
        });
    }

    /// Describe calls that actually reached a visual backend.
    pub fn describe_calls(&self) -> usize {
        self.events
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    TraceEvent::Describe {
                        cached: false,
                        error: None,
                        ..
                    }
                )
            })
            .count()
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = (&ToolCall, &ToolResult)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::ToolCall { call, result, .. } => Some((call, result)),
            _ => None,
        })
    }

    pub fn planner_requests(&self) -> impl Iterator<Item = &ChatRequest> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Llm { request, .. } => Some(request),
            _ => None,
        })
    }

    pub fn mutation_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::WorldMutation { .. }))
            .count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
