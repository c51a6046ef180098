//! Retrieval-augmented forecasting with invariant/dynamic decomposition.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common instantiations.

pub mod analysis;
pub mod codec;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod retrieval;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type KnowledgeBase64 = retrieval::KnowledgeBase<f64>;
pub type KnowledgeBase32 = retrieval::KnowledgeBase<f32>;
pub type Window64 = data::Window<f64>;
