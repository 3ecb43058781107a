use thiserror::Error;

/// Errors raised by the orbit-rank machinery.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid group specification: {0}")]
    InvalidSpec(String),

    #[error("observation does not match the group payload: {0}")]
    PayloadMismatch(String),

    #[error("degenerate design: stacked covariates are rank deficient at n = {n}")]
    DegenerateDesign { n: usize },

    #[error("numerics failure in {routine}: no convergence for x = {x}, a = {a}, b = {b}")]
    NoConvergence {
        routine: &'static str,
        x: f64,
        a: f64,
        b: f64,
    },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid calibrator: {0}")]
    InvalidCalibrator(String),

    #[error("mismatched significance levels: {0} vs {1}")]
    AlphaMismatch(f64, f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("calibrator produced a nonpositive density {0}")]
    NonPositiveDensity(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
