//! Two-stage contrastive embedding pipeline for HTTP payload threat
//! classification.
//!
//! Stage 1 trains a text encoder so that vulnerability descriptions cluster
//! by type. Stage 2 freezes that encoder and trains a payload encoder to land
//! each payload on the embedding of its linked description. Inference is
//! retrieval: a payload is assigned the type whose textual prototype is
//! nearest in cosine distance, so new types can be added from a label alone.
//!
//! The crate also carries the comparison machinery: TF-IDF + random forest,
//! a supervised encoder + linear head, an HNSW-backed kNN vote, metrics,
//! PCA projections and a synthetic benchmark generator.

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evalviz;
pub mod featurize;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod retrieve;
pub mod synthgen;

pub(crate) mod rng;

pub use error::{Error, Result};
