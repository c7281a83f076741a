//! System-level simulator for full-dimensional (2D-array) massive MIMO
//! cellular downlinks.
//!
//! The library is organized around a three-layer precoder for uniform planar
//! arrays: an elevation null-space filter driven by averaged inter-cell
//! interference statistics, a large-scale eigen-beamforming stage, and an
//! effective-channel zero-forcing stage with exact per-column power
//! normalization. Around it sit the supporting pieces: hexagonal multi-cell
//! geometry, one-ring / single-path channel synthesis with pilot-contaminated
//! covariance estimation, rate formulas (direct SINR, closed-form, bounds),
//! and a deterministic Monte-Carlo harness.
//!
//! All numeric kernels are generic over the real scalar via [`Real`];
//! concrete `f64` aliases live at the crate root (`Cx64`, `CMat64`, ...).

pub mod channel;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod num;
pub mod precoding;
pub mod rate;
pub mod validate;

pub use crate::num::Real;

/// Complex scalar over `f64`, the scalar type the simulator runs at.
pub type Cx64 = num_complex::Complex<f64>;
/// Dynamically sized complex matrix over `f64`.
pub type CMat64 = nalgebra::DMatrix<Cx64>;
/// Dynamically sized complex column vector over `f64`.
pub type CVec64 = nalgebra::DVector<Cx64>;
