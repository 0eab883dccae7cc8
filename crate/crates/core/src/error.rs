use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Like [`Error::Domain`], but raised while reading a file.
    #[error("domain error at line {line}: {msg}")]
    DomainAt { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    /// A run or ranked list violates its ordering contract.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("infeasible generator spec: {0}")]
    Spec(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error(
        "degenerate feedback: {medium} interpolated precision is 0 at recall level {recall_level}; \
         choose another recall level"
    )]
    DegenerateFeedback { medium: &'static str, recall_level: f64 },

    #[error("query {0} has no relevant judgments")]
    UndefinedQuery(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Checks that `value` is a finite number in `[0, 1]`.
pub(crate) fn check_unit(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {value} is outside [0, 1]")))
    }
}
