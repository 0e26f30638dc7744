//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown heater channel {0}")]
    UnknownChannel(u32),
    #[error("channel {channel} would need negative total power ({power:.6} mW)")]
    NegativePower { channel: u32, power: f64 },
    #[error("channel {channel} drive {power:.6} mW outside heater range")]
    RangeExceeded { channel: u32, power: f64 },
    #[error("singular or non-square K matrix")]
    Singular,
    #[error("found {found} distinguishable troughs, expected {expected}")]
    NotEnoughTroughs { found: usize, expected: usize },
    #[error("spectrum grids differ")]
    GridMismatch,
    #[error("window [{lo}, {hi}] nm not usable: {why}")]
    BadWindow { lo: f64, hi: f64, why: String },
    #[error("unknown tap: {0}")]
    UnknownTap(String),
    #[error("ascription failed: {0}")]
    Ascription(String),
    #[error("{what} did not converge in {iterations} iterations (last error {last_error:.5} nm)")]
    NonConvergence {
        what: String,
        iterations: usize,
        last_error: f64,
    },
    #[error("trough tracking lost: {0}")]
    TrackingLost(String),
    #[error("transmission {0} not reachable by filter shape")]
    Unreachable(f64),
    #[error("physical weight {0} outside [-1, 1]")]
    Unrealizable(f64),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("sinusoid fit failed: {0}")]
    FitFailed(String),
    #[error("mixing matrix is not unitary (deviation {0:e})")]
    NonUnitary(f64),
}

impl Error {
    /// True for failures of an iterative controller or optimizer, as
    /// opposed to bad inputs.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::TrackingLost(_) | Error::Diverged(_)
        )
    }
}
