//! CSV ingestion, formulas and design matrices.

mod dataset;
mod design;
mod format;
mod formula;
pub mod summary;

pub use dataset::{load_csv, Column, Dataset};
pub use design::{build_design, DesignMatrix, INTERCEPT};
pub use format::sig6;
pub use formula::{Formula, Term};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error at row {row}{}: {message}", if column.is_empty() { String::new() } else { format!(", column {column}") })]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("no data rows")]
    EmptyData,
    #[error("unknown variable: {0}")]
    UnknownVariable(String),
    #[error("variable {0} is not numeric")]
    NotNumeric(String),
    #[error("formula error: {0}")]
    Formula(String),
    #[error("{0}")]
    Invalid(String),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(pos) => DataError::Parse {
                row: pos.line() as usize,
                column: String::new(),
                message: e.to_string(),
            },
            None => DataError::Io(e.to_string()),
        }
    }
}
