//! Benchmark engine for regression on large, sparse, mixed-type tabular
//! data.
//!
//! The pipeline runs codebook-driven ingestion ([`codebook`], [`dataio`]),
//! design-matrix construction ([`preprocess`]), seven regression models
//! ([`linear`], [`trees`], [`neural`]), a paired-split evaluation harness
//! ([`harness`]), multiple-comparison statistics ([`stats`]) and a t-SNE
//! projection of factor embeddings ([`projection`]).

pub mod codebook;
pub mod dataio;
pub mod digest;
pub mod harness;
pub mod linear;
pub mod neural;
pub mod preprocess;
pub mod projection;
pub mod stats;
pub mod trees;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
