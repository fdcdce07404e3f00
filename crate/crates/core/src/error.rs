use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected \"BRSTNSR1\"")]
    BadMagic { path: PathBuf },

    #[error("truncated tensor file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("zero dimension in tensor header ({height}x{width}x{channels})")]
    ZeroDimension {
        height: u32,
        width: u32,
        channels: u32,
    },

    #[error("tensor contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step index {n} out of range {lo}..={hi}")]
    StepOutOfRange { n: usize, lo: usize, hi: usize },

    #[error(
        "g = {g:e} violates the feasibility bound {bound:e} at step {n} (radicand {radicand:e})"
    )]
    GConstraint {
        n: usize,
        g: f64,
        bound: f64,
        radicand: f64,
    },

    #[error("step {n}: generalized posterior is singular at n + 1 = N; use the DDPM posterior")]
    SingularLastStep { n: usize },

    #[error("predictor queried at sigma_t = 0 (step {n})")]
    ZeroSigma { n: usize },

    #[error("non-finite value produced at generative step {n}")]
    NonFiniteStep { n: usize },

    #[error("training diverged at iteration {iter}: loss {loss}")]
    Diverged { iter: usize, loss: f64 },

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{0}")]
    Format(String),

    #[error("predictor failed: {0}")]
    Predictor(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
