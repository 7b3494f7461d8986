use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// A file or payload does not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    /// A text file row could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Inconsistent or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An index or parameter is outside its admissible range.
    #[error("out of range: {0}")]
    Range(String),

    /// Volume is too small for the requested operation.
    #[error("size error: {0}")]
    Size(String),

    /// A code vector does not fit the codec it was handed to.
    #[error("codec error: {0}")]
    Codec(String),

    /// Two codes from incompatible codec families were compared.
    #[error("unsupported comparison: {0}")]
    UnsupportedComparison(String),

    /// A non-finite value showed up in a numerical computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// Too few depth points constrain the pose.
    #[error("tracking failure: {usable} usable points (need {required})")]
    TrackingFailure { usable: usize, required: usize },

    /// No pose of a trajectory lies close enough to a query timestamp.
    #[error("association failure: {0}")]
    Association(String),

    /// The data could not produce the requested number of samples.
    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
