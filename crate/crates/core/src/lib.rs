//! Topological features of transformer attention maps.
//!
//! Per-sentence attention tensors are turned into three feature families:
//!
//! - **graph** features of thresholded attention graphs (strongly connected
//!   components, edges, simple cycles, degree, Betti numbers, greedy matching
//!   number, chordality),
//! - **barcode** features of the 0/1-dimensional persistence of the
//!   attention-weight filtration,
//! - **pattern** distances to idealized attention patterns.
//!
//! The resulting [`FeatureMatrix`] feeds a standardize → PCA → L1 logistic
//! regression classifier ([`linear_model`]), and [`analysis`] provides the
//! introspection tools built on top of it: model-to-model distances, head
//! roles, per-sentence explanations and per-category recall.

pub mod analysis;
pub mod attn_graph;
pub mod error;
pub mod features;
pub mod linear_model;
pub mod patterns;
pub mod persistence;
pub mod tensor_io;

pub use error::{Error, Result};
pub use features::{ExtractConfig, FeatureFamily, FeatureId, FeatureMatrix};
pub use linear_model::TrainedModel;
pub use tensor_io::{AttentionMap, AttentionTensor, Category, CorpusRecord, Split, TokenMeta};
