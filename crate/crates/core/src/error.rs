//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the open domain of a singular function.
    #[error("{what} = {value} outside domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// Parameter set violates a model invariant.
    #[error("invalid parameter {what}: {why}")]
    InvalidParams { what: &'static str, why: String },

    /// No k2 <= 1e6 validates the coercivity bound.
    #[error("coercivity certificate failed: required k2 = {required_k2:.3e} exceeds 1e6")]
    CoercivityCertificate { required_k2: f64 },

    /// Two fields on different grids were combined.
    #[error("grid mismatch: {0}x{1} vs {2}x{3}")]
    GridMismatch(usize, usize, usize, usize),

    /// Operator restricted to zero-mean fields got a field with mean.
    #[error("field has non-zero mean {mean:.3e} (norm {norm:.3e}); operator requires zero mean")]
    NonZeroMean { mean: f64, norm: f64 },

    /// Helmholtz symbol vanishes on some grid eigenvalue.
    #[error("singular Helmholtz symbol a + b*lambda + c*lambda^2 = {symbol:.3e} at lambda = {lambda:.6e}")]
    SingularSymbol { lambda: f64, symbol: f64 },

    /// Initial perturbation does not fit in the admissible range.
    #[error("amplitude {amplitude} too large: |mean| + amplitude = {sum} must be <= 1 - 2*delta = {limit}")]
    AmplitudeTooLarge {
        amplitude: f64,
        sum: f64,
        limit: f64,
    },

    /// Energy guard exhausted its dt backoff budget.
    #[error(
        "energy guard exhausted after {retries} retries; last energy increment {last_increment:.3e}"
    )]
    GuardExhausted { retries: usize, last_increment: f64 },

    /// A field picked up NaN or infinite entries.
    #[error("non-finite value encountered in {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },

    /// Operation defined only in conserved mode.
    #[error("{what} is defined only in conserved mode")]
    ConservedOnly { what: &'static str },

    /// Two diagnostic series do not share grid or time stamps.
    #[error("misaligned series: {why}")]
    MisalignedSeries { why: String },

    /// A diagnostics series is too short for the requested window.
    #[error("insufficient series: {why}")]
    InsufficientSeries { why: String },
}
