//! Crate-wide error type for fallible, non-hot-path operations.
//!
//! Tensor kernels panic on shape misuse (programmer error); everything that
//! touches user input, files, or numerically degenerate data goes through
//! [`Error`] instead.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The inverse DFT of a supposedly conjugate-symmetric spectrum produced
    /// a non-negligible imaginary part, which means a band mask broke the
    /// symmetry of a real signal's spectrum.
    #[error("spectral symmetry violation: imaginary residue {residue:.3e} exceeds {limit:.3e}")]
    SymmetryViolation { residue: f64, limit: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Io(_) | Error::Image(_) | Error::Checkpoint(_) => 4,
            _ => 3,
        }
    }
}
