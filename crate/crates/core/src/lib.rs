//! Two-stream ConvNets for extremely low resolution (eLR) action recognition.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`ops`]: dense tensors and forward/backward primitives.
//! - [`nn`]: network specs, parameter storage, forward/backward orchestration, checkpoints.
//! - [`fusion`]: sum, concat and 1×1-conv fusion of spatial and temporal maps.
//! - [`coupled`]: semi-coupled eLR/HR training with per-layer filter sharing.
//! - [`video`]: resampling, normalization, optical flow and flow-stack assembly.
//! - [`harness`]: manifests, folds, training runs, evaluation and feature export.

pub mod coupled;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Scalar, Tensor};
