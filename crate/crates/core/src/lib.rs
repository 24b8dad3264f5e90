//! Coherence auditing for probability quotes over logically related questions.
//!
//! The crate builds coherent polytopes for small cliques of related binary
//! questions, projects quotes onto them, certifies the residual incoherence
//! left after composing specialist quotes, predicts and monitors that
//! residual, and evaluates what it costs downstream.

pub mod composition;
pub mod decision;
pub mod error;
pub mod io;
pub mod manifest;
pub mod monitor;
pub mod polytope;
pub mod prediction;
pub mod projection;
pub mod quote;
pub mod simharness;

pub use error::{CoherenceError, Result};
pub use polytope::{Clique, PolytopeSpec, Relation, RelationKind, VertexSet};
pub use projection::{DykstraConfig, ProjectionResult};
pub use quote::{Provenance, Quote};
