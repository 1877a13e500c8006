use thiserror::Error;

use crate::lattice::LatticeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Lattice(#[from] LatticeError),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("target set is empty")]
    EmptyTargets,

    #[error("solver did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("constant unavailable: max hitting probability {max_h} is not below 1/2")]
    ConstantUnavailable { max_h: f64 },

    #[error("constant scan exhausted up to C = {largest_c:e} (largest violation {violation:e})")]
    ScanExhausted { largest_c: f64, violation: f64 },

    #[error("configuration {0} lies in the pattern")]
    InPattern(String),

    #[error("weight vanishes at configuration {0} off the pattern")]
    ZeroWeight(String),

    #[error("cap exceeded: {what} = {size} > {cap}")]
    CapExceeded { what: &'static str, size: u128, cap: u128 },

    #[error("surviving mass {mass:e} at t = {t} is too small")]
    SurvivalUnderflow { t: f64, mass: f64 },

    #[error("estimated acceptance {rate:e} is below the minimum {min:e}")]
    AcceptanceTooLow { rate: f64, min: f64 },

    #[error("fit window keeps {points} grid points, at least 3 needed")]
    WindowTooSmall { points: usize },

    #[error("estimate at t = {t} is not positive")]
    NonPositiveEstimate { t: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
