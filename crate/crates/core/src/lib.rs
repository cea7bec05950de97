//! Plan-based data-to-text generation.
//!
//! The pipeline maps a [`graph::FactGraph`] to a [`plan::TextPlan`] (with the
//! [`exhaustive`] planner or the linear-time [`transition`] planner driven by a
//! trained [`controller`]), realizes k-best candidates ([`realizer`]), reranks
//! them by entity-sequence agreement with the plan ([`verifier`]) and finally
//! generates referring expressions ([`reg`]). [`eval`] holds metrics and the
//! planner benchmark.

pub mod controller;
pub mod eval;
pub mod exhaustive;
pub mod graph;
pub mod pipeline;
pub mod plan;
pub mod realizer;
pub mod reg;
pub mod transition;
pub mod verifier;
