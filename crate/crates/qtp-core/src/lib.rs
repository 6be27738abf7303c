//! Numerical engine for detection probabilities of a free scalar quantum
//! field measured by localized detectors.
//!
//! The crate computes single- and multi-detector detection densities from
//! closed-time-path correlation functions, with every production path backed
//! by an independent brute-force reference implementation (truncated Fock
//! space, literal quadrature) used in the test suite.

pub mod detector;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fftgrid;
pub mod fock;
pub mod geometry;
pub mod grid;
pub mod probability;
pub mod quadrature;
pub mod special;
pub mod wick;

/// Crate version, recorded in run manifests for reproducibility.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{QtpError, Result};
pub use field::{FieldModel, FieldSpec, FieldState, WavePacket};
pub use geometry::{minkowski_dot, Dim, FourVector, SamplingFunction, SmearingDensity, Worldline};
