use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid STFT plan: {0}")]
    InvalidPlan(String),

    #[error("empty signal")]
    EmptySignal,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("could not satisfy overlap constraint after {draws} draws: {detail}")]
    OverlapInfeasible { draws: usize, detail: String },

    #[error("too many sources for permutation search ({0} > 6); pre-assign estimates to references")]
    TooManySources(usize),

    #[error("unsupported WAV format in {}: {detail}", .path.display())]
    UnsupportedWav { path: PathBuf, detail: String },

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
