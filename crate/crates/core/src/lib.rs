//! Crafting and evaluation toolkit for compression-resistant adversarial
//! perturbations against embedding models.
//!
//! The crate bundles:
//! - a deterministic tensor/RNG/PPM foundation ([`tensor`], [`rng`], [`ppm`]),
//! - bilinear resampling with an exact adjoint ([`interp`]),
//! - a JPEG quantization simulator with a differentiable variant ([`jpeg`]),
//! - an embedding-model contract plus a toy reference model ([`model`]),
//! - the sign-gradient attack family with a smoothing wrapper ([`attack`]),
//! - frequency/smoothness diagnostics ([`analysis`]),
//! - an experiment driver producing deterministic CSV reports ([`harness`]).

pub mod analysis;
pub mod attack;
pub mod error;
pub mod harness;
pub mod interp;
pub mod jpeg;
pub mod model;
pub mod ppm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::ImageTensor;
