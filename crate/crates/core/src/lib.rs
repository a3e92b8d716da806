//! Diagnosing rule conflicts in natural-language prompt policies.

pub mod adapters;
pub mod analytics;
pub mod compiler;
pub mod evaluation;
pub mod formula;
pub mod pipeline;
pub mod pyrule;
pub mod registry;
pub mod store;
pub mod triage;
pub mod value;
pub mod witness;
