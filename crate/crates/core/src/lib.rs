//! Separatrix localization for multistable dynamical systems.
//!
//! Trains scalar Koopman eigenfunctions ψ with positive eigenvalue λ against
//! the PDE ∇ψ·f = λψ; the zero level set of a trained ψ marks the basin
//! boundary. The crate supplies the model families, the differentiation
//! engine, vector fields with basin classification, training distributions,
//! the training loop, separatrix extraction/validation, and closed-form plus
//! brute-force references used by the test suites.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod models;
pub mod oracles;
pub mod par;
pub mod sampling;
pub mod separatrix;
pub mod training;

pub use error::{Error, Result};

// array types appear throughout the public API
pub use ndarray;
