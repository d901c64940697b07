//! Local-coordinate-frame forecasting for interacting dynamical systems.
//!
//! The crate canonicalizes trajectories of interacting objects into per-node
//! roto-translated coordinate frames and learns their dynamics with a
//! variational graph network. It bundles:
//!
//! - [`tensor`] / [`tape`] / [`nn`]: a dense f64/f32 tensor type with
//!   reverse-mode automatic differentiation and the small layer library
//!   (linear, MLP, batch norm, LSTM/GRU cells) everything else builds on,
//! - [`geometry`]: rotation matrices, ZYX Euler conversions, angle wrapping,
//!   spherical coordinates,
//! - [`frames`]: canonicalization into local frames, the inverse (globalizing)
//!   map, and global roto-translation utilities for property testing,
//! - [`sim`]: deterministic dataset generators with ground-truth interaction
//!   labels, a constant-velocity baseline, and the on-disk dataset format,
//! - [`model`]: the variational forecaster (edge encoder, latent edge types,
//!   Markovian/recurrent decoders, anisotropic filters, ELBO loss),
//! - [`harness`]: normalization, training, evaluation metrics, ablations, and
//!   the executable property suites behind the `check-props` CLI command.
//!
//! Core math is generic over the scalar type via [`scalar::Scalar`]
//! (`f32`/`f64`); concrete `f64` aliases are exported at the crate root and
//! are what the CLI and file formats use.

pub mod checkpoint;
pub mod frames;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod sim;
pub mod tape;
pub mod tensor;

pub use scalar::Scalar;

/// Dense tensor with 64-bit float entries (the default precision).
pub type Tensor64 = tensor::Tensor<f64>;
/// Dense tensor with 32-bit float entries.
pub type Tensor32 = tensor::Tensor<f32>;
/// Autodiff computation graph over 64-bit floats.
pub type Graph64 = tape::Graph<f64>;
/// Named parameter set over 64-bit floats.
pub type ParamSet64 = nn::ParamSet<f64>;
/// Scene trajectory states over 64-bit floats.
pub type SceneStates64 = frames::SceneStates<f64>;
/// Dataset bundle over 64-bit floats.
pub type DatasetBundle64 = sim::DatasetBundle<f64>;
/// The forecaster model over 64-bit floats.
pub type Forecaster64 = model::Forecaster<f64>;
