//! Sequence-to-sequence translation with sequence-level training.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`.

#![allow(clippy::type_complexity)]

pub mod bpe;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod reward;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

pub type Tensor = tensor::Tensor<f64>;
pub type ParamSet = tensor::ParamSet<f64>;
pub type Model = model::Seq2Seq<f64>;
pub type Checkpoint = model::Checkpoint<f64>;
pub type Ensemble = decoding::EnsembleSpec<f64>;
