//! Multimodal captioning transformer with seq2seq masked-language-model
//! training, a web alt-text curation pipeline, captioning metrics and a
//! model-size × data-size scaling harness on a synthetic captioning world.
//!
//! Numerics, model, objectives and decoding are generic over [`Scalar`]
//! (`f32` or `f64`); the aliases below fix the precision. Training in the
//! harness runs in `f32`, gradient checks in `f64`.

pub mod corpus;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod scalar;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type ParamStore32 = numerics::ParamStore<f32>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type CaptionModel32 = model::CaptionModel<f32>;
pub type CaptionModel64 = model::CaptionModel<f64>;
pub type Batch32 = model::MultimodalBatch<f32>;
pub type Batch64 = model::MultimodalBatch<f64>;
pub type Checkpoint32 = numerics::Checkpoint<f32>;
pub type Checkpoint64 = numerics::Checkpoint<f64>;
