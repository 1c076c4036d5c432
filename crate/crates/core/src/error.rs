// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every analysis module.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    /// Input contained NaN/Inf or was otherwise unusable as a number.
    #[error("numeric input error: {0}")]
    NumericInput(String),

    /// KL divergence with `p_i > 0` where `q_i == 0`.
    #[error("divergence undefined: p[{index}] = {p} but q[{index}] = 0")]
    DivergenceUndefined { index: usize, p: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    /// A character of the input is not covered by any vocabulary surface or scheme rule.
    #[error("coverage error: character {ch:?} at offset {offset} is not covered")]
    Coverage { ch: char, offset: usize },

    #[error("range error: {0}")]
    Range(String),

    #[error("length error: sequence of {len} tokens exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("incomplete checkpoint: missing tensor {0:?}")]
    IncompleteCheckpoint(String),

    #[error("invalid patch plan: {0}")]
    Plan(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("losslessness error: {0}")]
    Losslessness(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("inversion error: cannot invert {span:?} at offset {offset}")]
    Inversion { span: String, offset: usize },

    #[error("schema error (line {line}): {message}")]
    Schema { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("prompt spec error: {0}")]
    Spec(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
