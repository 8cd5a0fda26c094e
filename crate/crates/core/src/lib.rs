//! Hybrid beamforming for arrays of six-dimensional movable sub-arrays.
//!
//! A base station carries `N` rigid uniform planar sub-arrays of `M`
//! antennas each. Every sub-array can translate inside a box and rotate
//! within a limited Euler-angle range, and each one drives a single RF chain
//! through unit-modulus phase shifters (sub-connected hybrid structure).
//!
//! The crate provides:
//!
//! - [`geometry`]: rotations, antenna placement and pose feasibility.
//! - [`channel`]: the polarized multi-path channel and its analytic
//!   derivatives with respect to sub-array positions and Euler angles.
//! - [`manifold`]: Riemannian conjugate gradient on the product of unit
//!   circles, used for the analog beamformer.
//! - [`fp_ao`]: the fractional-programming surrogate, the closed-form
//!   digital beamformer and the outer alternating-optimization loop.
//! - [`motion_opt`]: per-sub-array position/orientation gradient ascent.
//! - [`scenario`]: configuration and seeded random scenario generation.
//! - [`baselines`]: the comparison schemes built from the same blocks.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod fp_ao;
pub mod geometry;
pub mod manifold;
pub mod motion_opt;
pub mod scenario;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
