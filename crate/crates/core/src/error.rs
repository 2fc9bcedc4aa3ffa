use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid interaction function: {0}")]
    InvalidPhi(String),

    #[error("invalid quadrature grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("spectral gap {gap:e} is too small for the complement solve")]
    IllConditioned { gap: f64 },

    #[error("operator norm {lambda} is within {distance:e} of the shift {shift}: resolvent is critical")]
    Critical { lambda: f64, shift: f64, distance: f64 },

    #[error("no sign change of lambda - 1 found for g = {g} with nu in [{lo}, {hi}]")]
    BracketNotFound { g: f64, lo: f64, hi: f64 },

    #[error("fixed-point map is not contracting at g = {g}, nu = {nu} (increment ratio {ratio})")]
    NonContraction { g: f64, nu: f64, ratio: f64 },

    #[error("two-point function overflowed at separation {separation} (nu below critical point)")]
    Overflow { separation: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
