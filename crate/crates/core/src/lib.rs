//! Desk-scale laboratory for automatic concept discovery and concept-based
//! models.
//!
//! The pipeline: segment labeled images into superpixel patches, embed them
//! in an activation space, cluster per class into concept candidates,
//! aggregate candidates into a global hypersphere concept space, auto-
//! annotate the training set by hypersphere membership, then train and
//! evaluate concept-embedding / concept-bottleneck models (with test-time
//! interventions) against task accuracy and concept alignment.
//!
//! The numeric core is generic over the scalar type ([`scalar::Scalar`],
//! `f32` or `f64`); the pipeline itself runs on the [`F`] alias.

pub mod discover;
pub mod embed;
pub mod error;
pub mod cluster;
pub mod data;
pub mod nn;
pub mod rng;
pub mod segment;
pub mod space;
pub mod scalar;

pub use error::{Error, Result};

/// Pipeline scalar type.
pub type F = f32;

/// Tensor over the pipeline scalar.
pub type Tensor32 = nn::Tensor<f32>;
/// Double-precision tensor; used by oracles and tests.
pub type Tensor64 = nn::Tensor<f64>;
