//! Passively safe, fuel-optimal impulsive reconfiguration of spacecraft swarms
//! near periodic orbits of restricted multi-body problems.
//!
//! The pipeline: correct a resonant periodic orbit (CR3BP / ER3BP / BCR4BP),
//! extract the oscillatory mode of its monodromy matrix, build local toroidal
//! coordinates (LTC) on the mode's eigenspace in the chief's VNB frame, solve
//! the discrete fuel-optimal impulsive transfer with passive-safety constraints
//! by sequential convex programming, and validate plans by nonlinear rollout,
//! shrinking-horizon MPC under model mismatch, and Monte-Carlo campaigns.

pub mod constants;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod frames;
pub mod integrate;
pub mod ltc;
pub mod ocp;
pub mod orbits;
pub mod relmotion;
pub mod scenario;
pub mod simkit;

pub use error::{Error, Result};

/// Scalar type used throughout the crate. The tolerances this library is
/// required to meet (1e-9..1e-14 nondimensional) are only attainable in
/// double precision.
pub type F = f64;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec6 = nalgebra::Vector6<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat6 = nalgebra::Matrix6<f64>;
