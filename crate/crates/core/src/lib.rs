//! Sparse-autoencoder latent features scored as BM25 terms.
//!
//! Dense token activations are encoded by a top-k sparse autoencoder,
//! pooled per document, passed through `u ↦ u^α`, and indexed like term
//! frequencies in an inverted index.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation_io;
pub mod analysis;
pub mod config;
pub mod error;
pub mod eval;
pub mod exec;
pub mod index;
pub mod latent;
pub mod matrix;
pub mod sae;
pub mod scorer;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use index::{build_index, FeatureStatistic, InvertedIndex};
pub use latent::{PhiTransform, Pooling, SparseVector};
pub use matrix::TokenMatrix;
pub use sae::{SaeModel, SparseCode, TrainConfig};
pub use scorer::{Bm25Params, Hit, RankedList, Scoring};
