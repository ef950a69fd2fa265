//! Viseme-level KL metric learning for normal and silent lipreading.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the harness uses.

pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod viseme_map;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type ProbSeq = losses::ProbSeq<f64>;
pub type VisualModel = models::VisualModel<f64>;
pub type LanguageModel = models::LanguageModel<f64>;
pub type Utterance = synth::Utterance<f64>;
pub type Dataset = synth::Dataset<f64>;
