//! Numerical laboratory for the prescribed scalar-curvature and boundary
//! mean-curvature problem on the standard half three-sphere.
//!
//! The crate provides the explicit objects of the blow-up analysis of this
//! problem — bubbles, blow-up energies, the interaction matrix and its least
//! eigenvalue, the Morse-theoretic index count, Pohozaev diagnostics, the
//! reduced multi-bubble energy — together with a desk-scale finite-difference
//! solver for the subcritical approximation that exhibits boundary
//! concentration.

pub mod diagnostics;
pub mod energetics;
pub mod error;
pub mod bubbles;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod morse;
pub mod reduced;
pub mod solver;

pub use error::{Error, Result};
