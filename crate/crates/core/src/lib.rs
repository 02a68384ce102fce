//! Embedding bounded-degree spanning trees into pseudorandom graphs and
//! their squares.
//!
//! The crate certifies (n,d,λ)-style pseudorandomness spectrally, decomposes
//! bounded-degree trees (leaves, bare paths, separated sets, stage plans),
//! and grows tree embeddings leaf-by-leaf with rollbacks: directly into a
//! host `G` when the tree has many leaves, or into `G²` via a spike
//! transform otherwise. Every reported embedding is re-checked by an
//! independent oracle.
//!
//! Module map:
//! - [`graphs`]: host graphs, generators, squaring, edge-list IO
//! - [`spectral`]: λ estimation and mixing / joinedness audits
//! - [`trees`]: tree generation and the decomposition toolkit
//! - [`matchmakers`]: auxiliary vertex-set selection and expansion audits
//! - [`embed`]: the extendability-based embedding engine
//! - [`harness`]: experiment configs, sweeps, and persistence

pub mod embed;
pub mod error;
pub mod graphs;
pub mod harness;
pub mod matchmakers;
pub mod spectral;
pub mod trees;
pub mod util;

pub use embed::{embed_in_square, embed_spanning_tree, verify_embedding, EmbedMode, EmbedParams, Embedding};
pub use error::{Error, Result, Step};
pub use graphs::Graph;
pub use spectral::SpectralCertificate;
pub use trees::Tree;
