use thiserror::Error;

use crate::sim::FlightLog;

/// Errors produced anywhere in the simulation, learning, and control stack.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("allocation matrix is singular: {0}")]
    SingularAllocation(String),

    #[error("non-finite vehicle state after integration at t = {t:.4} s")]
    NonFiniteState { t: f64 },

    #[error("ground-effect singularity: height {height:.4} m is at or below {limit:.4} m")]
    GroundEffectSingularity { height: f64, limit: f64 },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("layer {layer} has zero spectral norm and cannot be normalized")]
    ZeroLayer { layer: usize },

    #[error("training produced a non-finite loss at epoch {epoch}, step {step} (max |w| = {max_weight:e})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        max_weight: f64,
    },

    #[error("training set is empty")]
    EmptyData,

    #[error("flight log too short: {0} records, need at least 3")]
    LogTooShort(usize),

    #[error("contraction certificate violated: sigma(B0^-1) * L_a_u = {ratio:.4} >= 1")]
    ContractionViolation { ratio: f64 },

    #[error("gain condition violated: lambda_min(Kv) = {kv_min:.4} <= L_a * rho = {la_rho:.4}")]
    GainCondition { kv_min: f64, la_rho: f64 },

    #[error("desired force {0:.3e} N is too small to define a thrust direction")]
    DegenerateForce(f64),

    #[error("simulation diverged at t = {t:.3} s: {reason}")]
    Divergence {
        t: f64,
        reason: String,
        partial: Box<FlightLog>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("log format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from a failed validation or certificate check.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::SingularAllocation(_)
                | Error::ContractionViolation { .. }
                | Error::GainCondition { .. }
                | Error::Config(_)
                | Error::GroundEffectSingularity { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
