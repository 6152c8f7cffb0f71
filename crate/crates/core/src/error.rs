//! Error type shared by all solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction rejected the requested resolution.
    #[error("invalid grid: {0}")]
    Grid(String),

    /// A parameter or descriptor failed validation.
    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },

    /// Non-finite data reached an operation that requires finite fields.
    #[error("non-finite field data in {0}")]
    NonFinite(&'static str),

    /// A linear solve failed or left an unacceptable residual.
    #[error("linear solve failed: {0}")]
    Solver(String),

    /// API misuse: out-of-order samples, mixed accumulators, foreign grids.
    #[error("usage error: {0}")]
    Usage(String),

    /// An optimization or adaptive refinement could not bracket its target.
    #[error("unresolved search: {0}")]
    Unresolved(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A checkpoint or field block failed parsing or validation.
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
