//! Continual-learning harness for memory-augmented agents.
//!
//! An agent solves a stream of task instances while reading from and writing
//! to an external pool of `(key, value)` memory units. The crate provides the
//! pool itself, BM25 retrieval over unit keys, raw and distilled experience
//! representations, two scripted worlds with a memory-sensitive agent, the
//! two-phase sequential protocol, transfer metrics and retrieval-diversity
//! diagnostics.

pub mod config;
pub mod diagnostics;
pub mod llm;
pub mod memory;
pub mod metrics;
pub mod protocol;
pub mod replay;
pub mod report;
pub mod representation;
pub mod retrieval;
pub mod world;

pub use memory::{Condition, ExperiencePool, Insight, MemoryUnit, Representation, UnitKind};
pub use retrieval::{Bm25Params, Query, RetrievalEvent};
