//! Customer-service agent kernel for a simulated storefront.
//!
//! The agent keeps a dialogue transcript and a domain-knowledge store
//! ([`memory`]), picks its next move by proposing, scoring and selecting
//! candidate plans ([`decision`]), and acts through schema-checked tools
//! with long URLs swapped for compact placeholders ([`action`]). Images are
//! described by a multimodal model used as a tool ([`mllm`]). Model calls go
//! through one contract with scripted, replay and HTTP backends ([`llm`]).
//! [`simenv`] provides the mock store, buyer scripts and success checks, and
//! [`eval`] the pass^k / contribution-ratio metrics and ablation runner.

pub mod action;
pub mod agent;
pub mod decision;
pub mod eval;
pub mod llm;
pub mod memory;
pub mod mllm;
pub mod scalar;
pub mod simenv;
pub mod trace;

/// Plan confidence in `[0, 1]`.
pub type Confidence = f64;
/// Durations in milliseconds.
pub type Millis = f64;
/// Exact rational used for pass^k.
pub type Exact = num_rational::BigRational;
/// Exact ratio of message counts.
pub type CountRatio = num_rational::Ratio<u64>;

pub use agent::{AgentConfig, LatencyModel};
pub use scalar::Real;
