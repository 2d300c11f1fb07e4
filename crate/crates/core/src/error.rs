use thiserror::Error;

/// Errors produced by model construction, simulation and the boundary solver.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or prior parameter violates its constraint. `key` is the
    /// config-file key of the offending parameter.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: &'static str, reason: String },

    /// An argument outside the domain of an operation (e.g. a probability
    /// of 1 where a value below 1 is required).
    #[error("domain error: {0}")]
    Domain(String),

    /// A time grid is empty, non-increasing or not aligned with [0, T].
    #[error("invalid grid: {0}")]
    Grid(String),

    /// Two objects that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The bisection bracket could not be established at a grid node.
    #[error("no sign change bracketing the boundary at t = {t}: objective is {f_lo} at x = {lo} and {f_hi} at x = {hi}")]
    BracketFailure { t: f64, lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    /// Too many simulated paths hit floating-point overflow and were dropped.
    #[error("{dropped} of {total} paths overflowed (limit {limit})")]
    TooManyOverflows { dropped: usize, total: usize, limit: usize },

    /// Malformed boundary CSV.
    #[error("malformed boundary CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
