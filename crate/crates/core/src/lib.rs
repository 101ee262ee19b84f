//! Simulation and certification tools for the tails of fixed points of the
//! multivariate smoothing transform `X = sum_i A_i X_i + Q`.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod error;
pub mod linalg;
pub mod matwalk;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod sphere;
pub mod tails;
pub mod wbp;

pub use error::{Error, Result};
pub use linalg::{Mat, Norm, Vector};
pub use model::ModelSpec;
pub use scalar::Real;

pub type Matrix = Mat<f64>;
pub type SpectralResult64 = spectral::SpectralResult<f64>;
