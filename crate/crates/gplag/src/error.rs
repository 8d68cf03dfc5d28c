//! Error type shared by all modules.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by data loading, kernel validation, fitting, prediction,
/// sampling, and the simulation generators.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file structure (bad or missing header, wrong column count).
    #[error("format error: {0}")]
    Format(String),

    /// A cell failed to parse; `row` is the 1-based data-row number.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// Input violated a documented invariant (series too short, bad parameter, …).
    #[error("validation error: {0}")]
    Validation(String),

    /// A function argument was outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// Numerical failure (factorization broke down after jitter escalation, non-finite value).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Every optimizer start failed; the message carries per-start diagnostics.
    #[error("optimization error: {0}")]
    Optimization(String),

    /// MCMC sampler failed to reach a workable acceptance rate.
    #[error("sampler failure: {0}")]
    SamplerFailure(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
