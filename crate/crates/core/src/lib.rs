//! Pseudo-labeling of a novel multiple-choice task from a labeled source task.
//!
//! The pipeline has three stages:
//!
//! 1. [`graphsim`] ranks source examples for each target example by cosine
//!    similarity averaged over three views: raw embeddings, multi-hop
//!    adjacency aggregation, and an ensemble of random GCNs ([`aggregate`]).
//! 2. [`llm`] labels a small target seed set with the selected cross-task
//!    demonstrations.
//! 3. [`glip`] spreads the seed labels over a query-choice node graph with a
//!    two-layer graph attention network trained against a cross-entropy plus
//!    mutual-exclusion objective.
//!
//! [`pipeline`] wires the stages into the baseline modes and evaluates in-task
//! ICL over the resulting pseudo-labeled pool.

pub mod aggregate;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod glip;
pub mod graph;
pub mod graphsim;
pub mod labels;
pub mod linalg;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod synth;

pub use config::{Mode, RunConfig};
pub use data::{Dataset, Example, Role};
pub use embedding::{EmbeddingKind, EmbeddingMatrix};
pub use error::{Error, Result};
pub use labels::{Provenance, PseudoLabeledSet};
pub use pipeline::{run_mode, PipelineInputs, RunOptions, RunReport};
