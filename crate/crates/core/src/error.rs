use std::path::PathBuf;

use thiserror::Error;

use crate::identifier::Infeasibility;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (e.g. a hidden box
    /// passed to IoU, an antenna id outside 1..=18).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or transform could not be fitted from the supplied data.
    #[error("fit error: {0}")]
    Fit(String),

    /// Inputs are mutually inconsistent (missing trace frames, frame mismatch).
    #[error("data error: {0}")]
    Data(String),

    #[error("sequencing error: frame {got} does not follow frame {previous}")]
    Sequencing { previous: u32, got: u32 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("infeasible identification problem: {0}")]
    Infeasible(Infeasibility),

    /// A file parsed but violates its schema.
    #[error("schema violation in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
