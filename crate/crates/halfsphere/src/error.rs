//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (pole of a
    /// projection, non-positive curvature value, gamma = 1 with H != 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Expression syntax error, with the byte offset of the offending token.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// Unknown identifier in an expression.
    #[error("unknown identifier `{0}`")]
    Name(String),

    /// API misuse: mismatched rule/domain, unsupported region tag, duplicate
    /// interaction points, tau out of range.
    #[error("usage error: {0}")]
    Usage(String),

    /// Grid backend cannot deliver the requested derivative at the requested
    /// accuracy (too few near-boundary samples, stencil underdetermined).
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Morse / genericity hypotheses fail for the given data.
    #[error("genericity failure: {0}")]
    Genericity(String),

    /// Solver-specific axisymmetry requirement violated.
    #[error("symmetry error: {0}")]
    Symmetry(String),

    /// Iteration did not converge within its cap.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Subset enumeration over more than 20 critical points.
    #[error("combinatorial limit: |F| = {0} exceeds the 2^20 subset cap")]
    CombinatorialLimit(usize),

    /// Bubble fitting failed (no local max in window, singular system).
    #[error("fit error: {0}")]
    Fit(String),

    /// Generic numerical failure (root bracketing, singular linear system).
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
