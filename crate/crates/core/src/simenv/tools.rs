//! Storefront tools exposed to the agent.

use serde_json::{json, Map, Value};

use crate::action::aci::is_placeholder;
use crate::action::{ActionKind, FieldType, InputSchema, ToolDescriptor, ToolError, ToolRegistry};
use crate::agent::Session;
use crate::memory::{ContentPart, Namespace};
use crate::mllm::Strategy;
use crate::trace::TraceEvent;

use super::world::{OrderAction, World, WorldError};

pub const PRODUCT_INFO: &str = "product_info";
pub const ORDER_LOOKUP: &str = "order_lookup";
pub const ORDER_UPDATE: &str = "order_update";
pub const LOGISTICS_TRACK: &str = "logistics_track";
pub const MULTIMODAL_DESCRIBE: &str = "multimodal_describe";
pub const MEMORY_RECALL: &str = "memory_recall";
pub const MEMORY_SEARCH: &str = "memory_search";
pub const MEMORY_WRITE: &str = "memory_write";
pub const STATUS_UPDATE: &str = "status_update";

const SEARCH_LIMIT: usize = 3;

fn str_arg<'a>(args: &'a Map<String, Value>, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

fn required<'a>(args: &'a Map<String, Value>, name: &str) -> Result<&'a str, ToolError> {
    str_arg(args, name).ok_or_else(|| ToolError::new("invalid_arguments", name.to_string()))
}

fn json_part(value: &Value) -> Vec<ContentPart> {
    vec![ContentPart::text(value.to_string())]
}

fn namespaces() -> FieldType {
    FieldType::Enum(
        Namespace::ALL
            .iter()
            .map(|n| n.as_str().to_string())
            .collect(),
    )
}

fn namespace(args: &Map<String, Value>) -> Result<Namespace, ToolError> {
    required(args, "namespace")?
        .parse()
        .map_err(|e: crate::memory::MemoryError| ToolError::new("invalid_arguments", e.to_string()))
}

fn search(session: &Session, ns: Namespace, query: &str, limit: usize) -> Value {
    let hits: Vec<Value> = session
        .ltm
        .search(ns, query, limit)
        .into_iter()
        .map(|(doc, score)| json!({"key": doc.key, "score": score, "body": doc.body}))
        .collect();
    Value::Array(hits)
}

/// Registry for one session. Under the planner strategy the describe tool
/// is left out, since images reach the planner directly.
pub fn registry(strategy: Strategy) -> ToolRegistry<Session> {
    let mut r = ToolRegistry::new();
    r.register(
        ToolDescriptor::new(
            PRODUCT_INFO,
            "Look up a product by id, or search the catalogue by free-text query.",
            InputSchema::new()
                .optional(
                    "product_id",
                    FieldType::String,
                    "Product id or a [Product N] placeholder",
                )
                .optional(
                    "query",
                    FieldType::String,
                    "Free-text search over titles and attributes",
                ),
        ),
        ActionKind::External,
        |args, s: &mut Session| {
            if let Some(id) = str_arg(args, "product_id") {
                let doc = s
                    .ltm
                    .get(Namespace::Product, id)
                    .ok_or_else(|| ToolError::not_found(format!("product `{id}`")))?;
                return Ok(json_part(&doc.body));
            }
            let query = str_arg(args, "query").ok_or_else(|| {
                ToolError::new("invalid_arguments", "product_id or query is required")
            })?;
            Ok(json_part(&search(
                s,
                Namespace::Product,
                query,
                SEARCH_LIMIT,
            )))
        },
    )
    .expect("distinct");

    r.register(
        ToolDescriptor::new(
            ORDER_LOOKUP,
            "Fetch an order: items, status and shipping address.",
            InputSchema::new().required(
                "order_id",
                FieldType::String,
                "Order id or an [Order N] placeholder",
            ),
        ),
        ActionKind::External,
        |args, s: &mut Session| {
            let id = required(args, "order_id")?;
            let doc = s
                .ltm
                .get(Namespace::Order, id)
                .ok_or_else(|| ToolError::not_found(format!("order `{id}`")))?;
            Ok(json_part(&doc.body))
        },
    )
    .expect("distinct");

    r.register(
        ToolDescriptor::new(
            ORDER_UPDATE,
            "Move an order through its lifecycle. Only legal transitions succeed.",
            InputSchema::new()
                .required(
                    "order_id",
                    FieldType::String,
                    "Order id or an [Order N] placeholder",
                )
                .required(
                    "action",
                    FieldType::Enum(
                        OrderAction::ALL
                            .iter()
                            .map(|a| a.as_str().to_string())
                            .collect(),
                    ),
                    "Transition to apply",
                ),
        ),
        ActionKind::External,
        |args, s: &mut Session| {
            let id = required(args, "order_id")?;
            let action: OrderAction = required(args, "action")?
                .parse()
                .map_err(|e: String| ToolError::new("invalid_arguments", e))?;
            let (from, to) = s.world.apply(id, action).map_err(|e| match e {
                WorldError::UnknownOrder(id) => ToolError::not_found(format!("order `{id}`")),
                WorldError::IllegalTransition { action, from } => ToolError::new(
                    "illegal_transition",
                    format!("cannot {action} an order that is {from}"),
                ),
                other => ToolError::new("world_error", other.to_string()),
            })?;
            let tick = s.world.clock;
            s.trace.push(TraceEvent::WorldMutation {
                order_id: id.to_string(),
                action: action.to_string(),
                from: from.to_string(),
                to: to.to_string(),
                tick,
            });
            let doc = World::order_doc(id, &s.world.orders[id]);
            s.ltm.put(Namespace::Order, id, doc).expect("non-empty key");
            Ok(vec![ContentPart::text(format!(
                "order {id}: {from} -> {to}"
            ))])
        },
    )
    .expect("distinct");

    r.register(
        ToolDescriptor::new(
            LOGISTICS_TRACK,
            "Shipment events for an order, oldest first.",
            InputSchema::new().required(
                "order_id",
                FieldType::String,
                "Order id or an [Order N] placeholder",
            ),
        ),
        ActionKind::External,
        |args, s: &mut Session| {
            let id = required(args, "order_id")?;
            let events = s
                .world
                .track(id)
                .ok_or_else(|| ToolError::not_found(format!("shipments for order `{id}`")))?;
            Ok(json_part(&json!({"order_id": id, "events": events})))
        },
    )
    .expect("distinct");

    if strategy == Strategy::Tool {
        r.register(
            ToolDescriptor::new(
                MULTIMODAL_DESCRIBE,
                "Describe an image the buyer sent, following an instruction such as \"is the item damaged?\".",
                InputSchema::new()
                    .required("placeholder", FieldType::String, "An [Image N] placeholder or image URL")
                    .optional("instruction", FieldType::String, "What to look for"),
            ),
            ActionKind::External,
            describe_handler,
        )
        .expect("distinct");
    }

    r.register(
        ToolDescriptor::new(
            MEMORY_RECALL,
            "Read one document from long-term memory.",
            InputSchema::new()
                .required("namespace", namespaces(), "Memory namespace")
                .required("key", FieldType::String, "Document key"),
        ),
        ActionKind::Internal,
        |args, s: &mut Session| {
            let ns = namespace(args)?;
            let key = required(args, "key")?;
            let doc = s
                .ltm
                .get(ns, key)
                .ok_or_else(|| ToolError::not_found(format!("{ns} `{key}`")))?;
            Ok(json_part(&doc.body))
        },
    )
    .expect("distinct");

    r.register(
        ToolDescriptor::new(
            MEMORY_SEARCH,
            "Keyword search within one long-term memory namespace, e.g. platform_policy.",
            InputSchema::new()
                .required("namespace", namespaces(), "Memory namespace")
                .required("query", FieldType::String, "Keywords")
                .optional("limit", FieldType::Integer, "Maximum hits (default 3)"),
        ),
        ActionKind::Internal,
        |args, s: &mut Session| {
            let ns = namespace(args)?;
            let query = required(args, "query")?;
            let limit = args
                .get("limit")
                .and_then(Value::as_u64)
                .map_or(SEARCH_LIMIT, |l| l as usize);
            Ok(json_part(&search(s, ns, query, limit)))
        },
    )
    .expect("distinct");

    r.register(
        ToolDescriptor::new(
            MEMORY_WRITE,
            "Store a note in long-term memory, e.g. a buyer preference.",
            InputSchema::new()
                .required("namespace", namespaces(), "Memory namespace")
                .required("key", FieldType::String, "Document key")
                .required("value", FieldType::String, "Content to store"),
        ),
        ActionKind::Internal,
        |args, s: &mut Session| {
            let ns = namespace(args)?;
            let key = required(args, "key")?;
            let value = required(args, "value")?;
            s.ltm
                .put(ns, key, json!(value))
                .map_err(|e| ToolError::new("invalid_arguments", e.to_string()))?;
            Ok(vec![ContentPart::text(format!("stored {ns}/{key}"))])
        },
    )
    .expect("distinct");

    r.register(
        ToolDescriptor::new(
            STATUS_UPDATE,
            "Record the agent's current working status; has no side effects.",
            InputSchema::new().required("status", FieldType::String, "Short status line"),
        ),
        ActionKind::Internal,
        |args, _s: &mut Session| {
            Ok(vec![ContentPart::text(format!(
                "status: {}",
                required(args, "status")?
            ))])
        },
    )
    .expect("distinct");

    r
}

fn describe_handler(
    args: &Map<String, Value>,
    s: &mut Session,
) -> Result<Vec<ContentPart>, ToolError> {
    let target = required(args, "placeholder")?.trim();
    let instruction = str_arg(args, "instruction");
    let placeholder = if is_placeholder(target) {
        target.to_string()
    } else if let Some(entry) = s.table.by_original(target) {
        entry.placeholder.clone()
    } else {
        let token = s.table.abstract_text(target, &s.aci);
        if !is_placeholder(&token) {
            return Err(ToolError::new("unknown_placeholder", target.to_string()));
        }
        token
    };
    let asset_id = s
        .table
        .get(&placeholder)
        .map(|e| e.original.clone())
        .ok_or_else(|| ToolError::new("unknown_placeholder", placeholder.clone()))?;
    let visual = std::sync::Arc::clone(&s.visual);
    let outcome = s
        .table
        .resolve(&placeholder, instruction, visual.as_ref(), &s.ltm);
    let instruction = instruction
        .map(str::trim)
        .filter(|i| !i.is_empty())
        .unwrap_or(crate::action::aci::DEFAULT_INSTRUCTION)
        .to_string();
    let (output, error, cached) = match &outcome {
        Ok(r) => (Some(r.text.clone()), None, r.cached),
        Err(e) => (None, Some(e.to_string()), false),
    };
    s.trace.push(TraceEvent::Describe {
        placeholder: Some(placeholder.clone()),
        asset_id,
        instruction,
        output,
        error,
        backend_id: visual.id().to_string(),
        cached,
    });
    match outcome {
        Ok(r) => Ok(vec![ContentPart::text(format!(
            "{placeholder}: {}",
            r.text
        ))]),
        Err(e) => Err(ToolError::new("describe_failed", e.to_string())),
    }
}
