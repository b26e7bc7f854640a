//! Discrete Hodge theory on a genus-2 hyperbolic surface with a flat unitary
//! bundle, Beltrami solver, tensor evaluators and zeta-regularized
//! determinants for Kähler coordinates on the moduli of pairs.

pub mod error;
pub mod linalg;
pub mod bundle;
pub mod calculus;
pub mod surface;
pub mod harmonic;
pub mod spectral;
pub mod deform;
pub mod tensors;
pub mod cli;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
