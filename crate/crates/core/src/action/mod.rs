//! Executable actions: schema-validated tool invocation (external actions),
//! internal actions, and the placeholder engine in [`aci`].
//!
//! Tool descriptors, calls and results use an MCP-style JSON shape:
//! `{name, description, input_schema}`, `{call_id, tool, arguments}` and
//! `{call_id, content: [{type, text|ref}], is_error}`.

pub mod aci;
pub mod schema;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::memory::{ContentPart, PartKind};
use crate::trace::{ActionTrace, TraceEvent};

pub use schema::{FieldSpec, FieldType, InputSchema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub input_schema: InputSchema,
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, input_schema: InputSchema) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            input_schema,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool: String,
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    #[serde(with = "wire_content")]
    pub content: Vec<ContentPart>,
    pub is_error: bool,
}

impl ToolResult {
    pub fn ok(call_id: &str, content: Vec<ContentPart>) -> Self {
        Self {
            call_id: call_id.to_string(),
            content,
            is_error: false,
        }
    }

    pub fn error(call_id: &str, text: impl Into<String>) -> Self {
        Self {
            call_id: call_id.to_string(),
            content: vec![ContentPart::text(text)],
            is_error: true,
        }
    }

    pub fn text(&self) -> String {
        self.content
            .iter()
            .map(|p| p.value.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

mod wire_content {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wire {
        #[serde(rename = "type")]
        kind: PartKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        #[serde(default, rename = "ref", skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    }

    pub fn serialize<S: Serializer>(parts: &[ContentPart], s: S) -> Result<S::Ok, S::Error> {
        let wire: Vec<Wire> = parts
            .iter()
            .map(|p| match p.kind {
                PartKind::Text => Wire {
                    kind: p.kind,
                    text: Some(p.value.clone()),
                    reference: None,
                },
                _ => Wire {
                    kind: p.kind,
                    text: None,
                    reference: Some(p.value.clone()),
                },
            })
            .collect();
        wire.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ContentPart>, D::Error> {
        let wire = Vec::<Wire>::deserialize(d)?;
        Ok(wire
            .into_iter()
            .map(|w| ContentPart {
                kind: w.kind,
                value: w.text.or(w.reference).unwrap_or_default(),
            })
            .collect())
    }
}

/// Failure raised by a tool handler. Rendered as `"{code}: {message}"`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ToolError {
    pub code: String,
    pub message: String,
}

impl ToolError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new("not_found", what)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("registration error: tool `{0}` is already registered")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    External,
    Internal,
}

/// Anything that carries a session's action trace.
pub trait ActionContext {
    fn trace_mut(&mut self) -> &mut ActionTrace;
}

pub type Handler<C> =
    Arc<dyn Fn(&Map<String, Value>, &mut C) -> Result<Vec<ContentPart>, ToolError> + Send + Sync>;

struct Registered<C> {
    descriptor: ToolDescriptor,
    kind: ActionKind,
    handler: Handler<C>,
}

/// Tools callable by the agent. Immutable once built; share it with `Arc`.
pub struct ToolRegistry<C> {
    tools: Vec<Registered<C>>,
}

impl<C> Default for ToolRegistry<C> {
    fn default() -> Self {
        Self { tools: Vec::new() }
    }
}

impl<C: ActionContext> ToolRegistry<C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(
        &mut self,
        descriptor: ToolDescriptor,
        kind: ActionKind,
        handler: F,
    ) -> Result<(), RegistryError>
    where
        F: Fn(&Map<String, Value>, &mut C) -> Result<Vec<ContentPart>, ToolError>
            + Send
            + Sync
            + 'static,
    {
        if self.get(&descriptor.name).is_some() {
            return Err(RegistryError::Duplicate(descriptor.name));
        }
        self.tools.push(Registered {
            descriptor,
            kind,
            handler: Arc::new(handler),
        });
        Ok(())
    }

    fn get(&self, name: &str) -> Option<&Registered<C>> {
        self.tools.iter().find(|t| t.descriptor.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn kind(&self, name: &str) -> Option<ActionKind> {
        self.get(name).map(|t| t.kind)
    }

    /// Descriptors in registration order.
    pub fn catalog(&self) -> Vec<ToolDescriptor> {
        self.tools.iter().map(|t| t.descriptor.clone()).collect()
    }

    /// Validates arguments, runs the handler and records the exchange in the
    /// trace. Never panics: handler failures, including panics, come back
    /// as error results.
    pub fn invoke(&self, call: &ToolCall, ctx: &mut C) -> ToolResult {
        let (result, kind) = match self.get(&call.tool) {
            None => (
                ToolResult::error(&call.call_id, "unknown_tool"),
                ActionKind::External,
            ),
            Some(tool) => (self.run(tool, call, ctx), tool.kind),
        };
        ctx.trace_mut().push(TraceEvent::ToolCall {
            call: call.clone(),
            result: result.clone(),
            internal: kind == ActionKind::Internal,
        });
        result
    }

    fn run(&self, tool: &Registered<C>, call: &ToolCall, ctx: &mut C) -> ToolResult {
        let empty = Map::new();
        let args = match &call.arguments {
            Value::Null => &empty,
            Value::Object(map) => map,
            _ => {
                return ToolResult::error(
                    &call.call_id,
                    "invalid_arguments: <arguments must be an object>",
                );
            }
        };
        let bad = tool
            .descriptor
            .input_schema
            .violations(&Value::Object(args.clone()));
        if !bad.is_empty() {
            return ToolResult::error(
                &call.call_id,
                format!("invalid_arguments: {}", bad.join(", ")),
            );
        }
        let handler = Arc::clone(&tool.handler);
        match catch_unwind(AssertUnwindSafe(|| handler(args, ctx))) {
            Ok(Ok(content)) => ToolResult::ok(&call.call_id, content),
            Ok(Err(e)) => ToolResult::error(&call.call_id, e.to_string()),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "handler panicked".to_string());
                ToolResult::error(&call.call_id, format!("handler_error: {msg}"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Default)]
    struct Ctx {
        trace: ActionTrace,
    }

    impl ActionContext for Ctx {
        fn trace_mut(&mut self) -> &mut ActionTrace {
            &mut self.trace
        }
    }

    fn product_info() -> ToolDescriptor {
        ToolDescriptor::new(
            "product_info",
            "Look up a product",
            InputSchema::new().required("product_id", FieldType::String, "product id"),
        )
    }

    fn registry() -> ToolRegistry<Ctx> {
        let mut r = ToolRegistry::new();
        r.register(product_info(), ActionKind::External, |args, _| {
            Ok(vec![ContentPart::text(format!(
                "product {}",
                args["product_id"].as_str().unwrap()
            ))])
        })
        .unwrap();
        r.register(
            ToolDescriptor::new("explode", "always panics", InputSchema::new()),
            ActionKind::Internal,
            |_, _| panic!("boom"),
        )
        .unwrap();
        r
    }

    fn call(tool: &str, args: Value) -> ToolCall {
        ToolCall {
            call_id: "c1".into(),
            tool: tool.into(),
            arguments: args,
        }
    }

    #[test]
    fn register_list_and_duplicate() {
        let mut r = registry();
        assert_eq!(r.catalog()[0].name, "product_info");
        assert_eq!(
            r.register(product_info(), ActionKind::External, |_, _| Ok(vec![])),
            Err(RegistryError::Duplicate("product_info".into()))
        );
        let wire = serde_json::to_string(&r.catalog()[0]).unwrap();
        let back: ToolDescriptor = serde_json::from_str(&wire).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), wire);
    }

    #[test]
    fn invoke_paths() {
        let r = registry();
        let mut ctx = Ctx::default();
        let ok = r.invoke(
            &call("product_info", json!({"product_id": "P100"})),
            &mut ctx,
        );
        assert!(!ok.is_error);
        assert_eq!(ok.text(), "product P100");

        let missing = r.invoke(&call("product_info", json!({})), &mut ctx);
        assert!(missing.is_error);
        assert_eq!(missing.text(), "invalid_arguments: product_id");

        let unknown = r.invoke(&call("teleport", json!({})), &mut ctx);
        assert_eq!(unknown.text(), "unknown_tool");
        assert_eq!(unknown.call_id, "c1");

        let panicked = r.invoke(&call("explode", Value::Null), &mut ctx);
        assert!(panicked.is_error);
        assert!(panicked.text().contains("boom"));

        assert_eq!(ctx.trace.events().len(), 4);
    }

    #[test]
    fn result_wire_shape() {
        let result = ToolResult {
            call_id: "c9".into(),
            content: vec![
                ContentPart::text("hello"),
                ContentPart::image_ref("https://img.example/a.png").unwrap(),
            ],
            is_error: false,
        };
        let wire = serde_json::to_value(&result).unwrap();
        assert_eq!(
            wire,
            json!({"call_id": "c9", "content": [
                {"type": "text", "text": "hello"},
                {"type": "image_ref", "ref": "https://img.example/a.png"}
            ], "is_error": false})
        );
        assert_eq!(serde_json::from_value::<ToolResult>(wire).unwrap(), result);
    }
}
