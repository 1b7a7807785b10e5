//! Observer-based control and detection for discrete-time LTI systems under
//! stealthy integrity attacks.
//!
//! The crate provides:
//! - dense state-space machinery (stepping, composition, frequency response,
//!   Schur tests, invariant zeros),
//! - gain synthesis over Riccati fixed points, coprime factor sets with the
//!   Bezout complements, switched gain banks and the derived filter families,
//! - closed-loop simulation with an observer-based realization of the
//!   stabilizing controller,
//! - kernel-attack construction (zero-dynamics, covert, replay) and stealth
//!   verification against the Kalman chi-square baseline detector,
//! - two kernel-attack detectors: the switched residual-encoder scheme and
//!   the encrypted-loop configuration,
//! - chi-square evaluation, joint noise sampling and empirical rate reports.

pub mod attacks;
pub mod detect_a;
pub mod detect_b;
pub mod eigen;
pub mod error;
pub mod loopsim;
pub mod statespace;
pub mod stats;
pub mod synthesis;

pub use error::{Error, Result};
