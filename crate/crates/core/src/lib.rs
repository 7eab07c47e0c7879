//! Fréchet distance between Gaussian fits of learned multi-resolution
//! features of power-grid time series, with the feature extractor, its
//! training, companion metrics and seeded disturbance generators.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod data;
pub mod disturbances;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Tensor64 = nn::Tensor3<f64>;
pub type Tensor32 = nn::Tensor3<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type Gaussian64 = metrics::GaussianEmbedding<f64>;
pub type Gaussian32 = metrics::GaussianEmbedding<f32>;
pub type Stack64 = hierarchy::ExtractorStack<f64>;
pub type Stack32 = hierarchy::ExtractorStack<f32>;
pub type FeatureSet64 = hierarchy::FeatureSet<f64>;
pub type FeatureSet32 = hierarchy::FeatureSet<f32>;
