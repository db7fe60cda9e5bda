use thiserror::Error;

/// Errors raised by the diagnostic meta-analysis library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("dataset has {found} studies; at least 2 are required")]
    DatasetTooSmall { found: usize },

    #[error("invalid study {id}: {message}")]
    Validation { id: String, message: String },

    #[error("argument outside the domain of {function}: {value}")]
    Domain { function: &'static str, value: f64 },

    #[error(
        "study {id}: empirical {which} is {value}, transform is not finite; use the half-cell correction"
    )]
    NonFiniteTransform {
        id: String,
        which: &'static str,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("optimizer start point has non-finite objective value")]
    NonFiniteStart,

    #[error("degenerate SROC curve: between-study variance of the specificity transform is zero")]
    DegenerateCurve,

    #[error("could not draw a study with both margins nonempty after {attempts} attempts")]
    Generation { attempts: usize },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
