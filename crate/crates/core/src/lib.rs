//! Regularized gradient-descent adversarial images ("just noticeable
//! difference" attacks), the FGSM / FGV / DeepFool baselines, and the
//! quality, distance and distribution measurements used to compare them.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision instantiation used by the CLI.

pub mod attacks;
pub mod classifier;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod regularizers;
pub mod scalar;
pub mod stats;
pub mod sweep;
pub mod tensor;

pub use error::{JndError, Result};
pub use scalar::Scalar;

/// `[H, W, C]` pixel grid in `[0, 255]` intensity units.
pub type Image<T> = tensor::Tensor<T>;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Image64 = Image<f64>;
pub type Image32 = Image<f32>;
pub type Model64 = classifier::Model<f64>;
pub type Model32 = classifier::Model<f32>;
pub type Dataset64 = data::Dataset<f64>;
