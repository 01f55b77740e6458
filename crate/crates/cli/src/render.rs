//! Human-readable rendering of trace events and transcripts.

use shopdesk::memory::{Message, WorkingMemory};
use shopdesk::trace::TraceEvent;

fn clip(text: &str, max: usize) -> String {
    let one_line = text.replace('\n', " ");
    if one_line.chars().count() <= max {
        one_line
    } else {
        let head: String = one_line.chars().take(max).collect();
        format!("{head}...")
    }
}

/// Lines describing one event; model exchanges are summarised by size only.
pub fn event_lines(event: &TraceEvent) -> Vec<String> {
    match event {
        TraceEvent::Llm {
            purpose,
            request,
            error,
            ..
        } => {
            let status = error
                .as_deref()
                .map_or_else(String::new, |e| format!(" error: {e}"));
            let purpose = format!("{purpose:?}").to_lowercase();
            vec![format!(
                "  llm {purpose}: {} prompt chars{status}",
                request.prompt_chars()
            )]
        }
        TraceEvent::Decision {
            plans,
            decision,
            executed,
        } => {
            let mut lines = vec!["  decision round:".to_string()];
            for plan in plans {
                let confidence = decision
                    .as_ref()
                    .and_then(|d| d.evaluations.iter().find(|e| e.plan_id == plan.plan_id))
                    .map_or_else(|| "   -  ".to_string(), |e| format!("{:.4}", e.confidence));
                let mark = if *executed == Some(plan.plan_id) {
                    "  <- selected"
                } else {
                    ""
                };
                lines.push(format!(
                    "    plan {} p={confidence} {}{mark}",
                    plan.plan_id,
                    clip(&plan.render(), 140)
                ));
            }
            if let Some(reason) = decision.as_ref().and_then(|d| d.rejected_reason.as_deref()) {
                lines.push(format!("    rejected: {reason}"));
            }
            lines
        }
        TraceEvent::ToolCall {
            call,
            result,
            internal,
        } => {
            let text: Vec<&str> = result.content.iter().map(|p| p.value.as_str()).collect();
            let status = if result.is_error { "error" } else { "ok" };
            let scope = if *internal { " (internal)" } else { "" };
            vec![format!(
                "  tool {}{scope} {} -> {status}: {}",
                call.tool,
                call.arguments,
                clip(&text.join(" "), 160)
            )]
        }
        TraceEvent::Describe {
            placeholder,
            asset_id,
            output,
            error,
            cached,
            ..
        } => {
            let target = placeholder.as_deref().unwrap_or(asset_id);
            let cache = if *cached { " (cached)" } else { "" };
            let body = match (output, error) {
                (_, Some(e)) => format!("error: {e}"),
                (Some(o), None) => clip(o, 160),
                (None, None) => String::new(),
            };
            vec![format!("  describe {target}{cache} -> {body}")]
        }
        TraceEvent::WorldMutation {
            order_id,
            action,
            from,
            to,
            ..
        } => vec![format!("  world: {action} {order_id} ({from} -> {to})")],
        TraceEvent::Note { message } => vec![format!("  note: {message}")],
    }
}

pub fn message_line(message: &Message) -> String {
    format!(
        "[{}] {}: {}",
        message.turn_index,
        message.role,
        message.body()
    )
}

pub fn transcript_lines(memory: &WorkingMemory) -> Vec<String> {
    memory.turns().iter().map(message_line).collect()
}
