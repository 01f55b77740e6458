use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::memory::{LongTermStore, Namespace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("unknown order `{0}`")]
    UnknownOrder(String),
    #[error("illegal_transition: cannot {action} an order that is {from}")]
    IllegalTransition {
        action: OrderAction,
        from: OrderStatus,
    },
    #[error("invalid world: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub title: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
    /// Price in cents.
    pub price: u64,
    pub stock: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    Created,
    Paid,
    Shipped,
    Delivered,
    Cancelled,
    RefundRequested,
    Refunded,
}

impl OrderStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OrderStatus::Created => "created",
            OrderStatus::Paid => "paid",
            OrderStatus::Shipped => "shipped",
            OrderStatus::Delivered => "delivered",
            OrderStatus::Cancelled => "cancelled",
            OrderStatus::RefundRequested => "refund_requested",
            OrderStatus::Refunded => "refunded",
        }
    }
}

impl fmt::Display for OrderStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderAction {
    Pay,
    Ship,
    Deliver,
    Cancel,
    RequestRefund,
    Refund,
}

impl OrderAction {
    pub const ALL: [OrderAction; 6] = [
        OrderAction::Pay,
        OrderAction::Ship,
        OrderAction::Deliver,
        OrderAction::Cancel,
        OrderAction::RequestRefund,
        OrderAction::Refund,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OrderAction::Pay => "pay",
            OrderAction::Ship => "ship",
            OrderAction::Deliver => "deliver",
            OrderAction::Cancel => "cancel",
            OrderAction::RequestRefund => "request_refund",
            OrderAction::Refund => "refund",
        }
    }

    /// Target status when applied to `from`, if the transition is allowed.
    pub fn transition(&self, from: OrderStatus) -> Option<OrderStatus> {
        use OrderStatus::*;
        match (self, from) {
            (OrderAction::Pay, Created) => Some(Paid),
            (OrderAction::Ship, Paid) => Some(Shipped),
            (OrderAction::Deliver, Shipped) => Some(Delivered),
            (OrderAction::Cancel, Paid | Shipped) => Some(Cancelled),
            (OrderAction::RequestRefund, Delivered) => Some(RefundRequested),
            (OrderAction::Refund, RefundRequested) => Some(Refunded),
            _ => None,
        }
    }
}

impl fmt::Display for OrderAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OrderAction::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown order action `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderItem {
    pub product_id: String,
    pub quantity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub buyer_id: String,
    pub items: Vec<OrderItem>,
    pub status: OrderStatus,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShipmentEvent {
    pub tick: u64,
    pub location: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(default = "policy_namespace")]
    pub namespace: Namespace,
    pub text: String,
}

fn policy_namespace() -> Namespace {
    Namespace::PlatformPolicy
}

/// Mock storefront state. Each episode owns a private copy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct World {
    #[serde(default)]
    pub products: BTreeMap<String, Product>,
    #[serde(default)]
    pub orders: BTreeMap<String, Order>,
    #[serde(default)]
    pub shipments: BTreeMap<String, Vec<ShipmentEvent>>,
    #[serde(default)]
    pub policies: BTreeMap<String, Policy>,
    #[serde(default)]
    pub buyers: BTreeMap<String, Value>,
    #[serde(default)]
    pub clock: u64,
}

impl World {
    pub fn validate(&self) -> Result<(), WorldError> {
        for order_id in self.shipments.keys() {
            if !self.orders.contains_key(order_id) {
                return Err(WorldError::Invalid(format!(
                    "shipments.{order_id} references an unknown order"
                )));
            }
        }
        for (id, order) in &self.orders {
            for item in &order.items {
                if !self.products.contains_key(&item.product_id) {
                    return Err(WorldError::Invalid(format!(
                        "orders.{id} references unknown product `{}`",
                        item.product_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies an order action, returning `(from, to)`.
    pub fn apply(
        &mut self,
        order_id: &str,
        action: OrderAction,
    ) -> Result<(OrderStatus, OrderStatus), WorldError> {
        let order = self
            .orders
            .get_mut(order_id)
            .ok_or_else(|| WorldError::UnknownOrder(order_id.to_string()))?;
        let from = order.status;
        let to = action
            .transition(from)
            .ok_or(WorldError::IllegalTransition { action, from })?;
        order.status = to;
        Ok((from, to))
    }

    /// Shipment events for an order, sorted by tick.
    pub fn track(&self, order_id: &str) -> Option<Vec<ShipmentEvent>> {
        let mut events = self.shipments.get(order_id)?.clone();
        events.sort_by_key(|e| e.tick);
        Some(events)
    }

    /// Value at a dotted path such as `orders.O1.status`.
    pub fn get_path(&self, path: &str) -> Option<Value> {
        let root = serde_json::to_value(self).ok()?;
        path.split('.')
            .try_fold(&root, |node, seg| match node {
                Value::Object(map) => map.get(seg),
                Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
                _ => None,
            })
            .cloned()
    }

    /// Equality ignoring the simulated clock.
    pub fn same_state(&self, other: &World) -> bool {
        self.products == other.products
            && self.orders == other.orders
            && self.shipments == other.shipments
            && self.policies == other.policies
            && self.buyers == other.buyers
    }

    pub fn product_doc(id: &str, p: &Product) -> Value {
        json!({
            "product_id": id,
            "title": p.title,
            "attributes": p.attributes,
            "price": format!("{}.{:02}", p.price / 100, p.price % 100),
            "stock": p.stock,
        })
    }

    pub fn order_doc(id: &str, o: &Order) -> Value {
        json!({
            "order_id": id,
            "buyer_id": o.buyer_id,
            "items": o.items,
            "status": o.status,
            "address": o.address,
        })
    }

    /// Long-term memory seeded from this world.
    pub fn to_store(&self) -> LongTermStore {
        let mut store = LongTermStore::new();
        store.advance_to(self.clock);
        for (id, p) in &self.products {
            store
                .put(Namespace::Product, id, Self::product_doc(id, p))
                .expect("non-empty key");
        }
        for (id, o) in &self.orders {
            store
                .put(Namespace::Order, id, Self::order_doc(id, o))
                .expect("non-empty key");
        }
        for id in self.shipments.keys() {
            let events = self.track(id).unwrap_or_default();
            store
                .put(
                    Namespace::Logistics,
                    id,
                    json!({"order_id": id, "events": events}),
                )
                .expect("non-empty key");
        }
        for (id, policy) in &self.policies {
            store
                .put(policy.namespace, id, json!(policy.text))
                .expect("non-empty key");
        }
        for (id, profile) in &self.buyers {
            store
                .put(Namespace::BuyerProfile, id, profile.clone())
                .expect("non-empty key");
        }
        store
    }
}
