//! Profiling-driven multi-agent engine that turns a natural-language
//! table-processing instruction plus raw table files into a processed table.
//!
//! The pieces, bottom-up:
//!
//! - [`embedding`]: scalar-generic embedding vectors and cosine similarity.
//! - [`gateway`]: chat completion and embedding access, a role-keyed replay
//!   mock, and per-run usage accounting.
//! - [`react`]: the `<THINK>`/`<ACTION>`/`<ANSWER>` tag protocol and the
//!   exploration loop that feeds snippet output back as observations.
//! - [`agents`]: prompt assembly and reply parsing for the interpreter,
//!   decomposer, profiler, generator, debugger and summarizer.
//! - [`library`]: the operator-template corpus, its embedding index and
//!   threshold + top-k retrieval.
//! - [`sandbox`]: subprocess execution with timeouts, stream capture and a
//!   file-access audit.
//! - [`evaluator`]: the only component that touches ground truth.
//! - [`workflow`]: the iterative refinement loop and final candidate selection.
//! - [`bench`]: task-bundle discovery, suite runs and metrics.

pub mod agents;
pub mod bench;
pub mod clock;
pub mod config;
pub mod embedding;
pub mod evaluator;
pub mod gateway;
pub mod library;
pub mod prompts;
pub mod react;
pub mod sandbox;
pub mod workflow;

pub use embedding::{cosine_similarity, EmbeddingVector, Scalar};
pub use library::OperatorIndex;

/// Double-precision embedding, the type every built-in backend produces.
pub type Embedding = EmbeddingVector<f64>;
/// Single-precision embedding, half the memory for large persisted indexes.
pub type Embedding32 = EmbeddingVector<f32>;
/// Operator index over double-precision embeddings.
pub type Index = OperatorIndex<f64>;
/// Operator index over single-precision embeddings.
pub type Index32 = OperatorIndex<f32>;
