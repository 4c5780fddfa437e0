//! Spectral para-differential calculus on the torus and two conjugacy solvers
//! built on it: circle maps conjugate to a rotation and invariant tori of
//! nearly integrable Hamiltonians.

pub mod circle;
pub mod config;
pub mod error;
pub mod harness;
pub mod kam;
pub mod littlewood_paley;
pub mod para;
pub mod probes;
pub mod report;
pub mod small_divisor;
pub mod spectral;

pub use error::{Error, Result};
pub use littlewood_paley::DyadicCutoff;
pub use spectral::{MatrixField, SpectralField, TorusGrid, VectorField};
