use thiserror::Error;

use crate::estimate::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} is not finite: {value}")]
    Domain { what: &'static str, value: f64 },

    /// Cumulative probabilities are not decreasing; `index` is the 1-based
    /// position of the first linear predictor that breaks the ordering.
    #[error("cumulative ordering violated at linear predictor {index}")]
    Ordering { index: usize },

    #[error("unsupported transform: {0}")]
    UnsupportedTransform(String),

    #[error("category {category} out of range 0..={max}{}", item.as_ref().map(|i| format!(" for item {i}")).unwrap_or_default())]
    Category {
        item: Option<String>,
        category: i64,
        max: usize,
    },

    #[error("specification error: {0}")]
    Specification(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("optimizer did not converge after {} iterations (relative gradient {:.3e})", .best.convergence.iterations, .best.convergence.relative_gradient)]
    NoConvergence { best: Box<FitResult> },

    #[error("inference error: {0}")]
    Inference(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn spec(msg: impl Into<String>) -> Self {
        Error::Specification(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
