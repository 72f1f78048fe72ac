use thiserror::Error;

/// Errors raised by the selection and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("column {column} has zero sample variance")]
    ConstantColumn { column: usize },

    #[error("need at least {required} rows, got {rows}")]
    TooFewRows { rows: usize, required: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("linear system is singular")]
    Singular,

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("complete separation: fitted probabilities collapsed to 0/1")]
    Separation,

    #[error("treatment vector has zero norm")]
    DegenerateTreatment,

    #[error("GCV denominator collapsed: {support} active coefficients with n = {n}")]
    DenominatorCollapse { support: usize, n: usize },

    #[error("every instrument has a first-stage coefficient below tolerance")]
    AllInstrumentsWeak,

    #[error("linear algebra backend: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
