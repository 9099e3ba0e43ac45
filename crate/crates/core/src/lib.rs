//! Knowledge-guided multi-objective training for abstractive clinical
//! summarization.
//!
//! The pipeline runs in stages:
//!
//! * [`corpus`] loads findings/impression records, tokenizes them and owns the vocabulary.
//! * [`ner`] finds clinical entity mentions with a gazetteer longest-match scan.
//! * [`knowledge`] indexes a concept knowledge base and ranks facts for each mention with BM25.
//! * [`model`] is a small shared-parameter transformer encoder-decoder with exact gradients.
//! * [`train`] runs Adam training, checkpointing and Bayesian search over the loss weights.
//! * [`eval`] scores generated summaries with ROUGE and entity-level factual accuracy.
//!
//! The model math is generic over [`Scalar`]; training runs at `f64`, checkpoints hold `f32`.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod knowledge;
pub mod model;
pub mod ner;
pub mod pipeline;
pub mod scalar;
pub mod train;

mod linalg;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model parameters at training precision.
pub type ModelParamsF64 = model::ModelParams<f64>;
/// Model parameters at checkpoint precision.
pub type ModelParamsF32 = model::ModelParams<f32>;
/// A dense tensor at training precision.
pub type TensorF64 = model::Tensor<f64>;
/// A dense tensor at checkpoint precision.
pub type TensorF32 = model::Tensor<f32>;
/// Adam moment state at training precision.
pub type AdamStateF64 = train::AdamState<f64>;
