//! Error types shared across the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter value violates its documented invariant.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// The EM loop for the misplacement matrix exhausted its iteration
    /// budget before the stopping rule was met. Callers must treat this
    /// as a failure of the whole chain/replicate.
    #[error("EM did not converge within {max_iter} iterations (last max |delta| = {delta:.3e})")]
    EmNonConvergence { max_iter: usize, delta: f64 },

    /// A zeta aggregate row carried no positive mass, so the constrained
    /// M-step has no interior maximizer.
    #[error("degenerate zeta aggregate: row {row} has no positive entry")]
    DegenerateZeta { row: usize },

    /// Malformed or inconsistent input data (e.g. a bad CSV row).
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
