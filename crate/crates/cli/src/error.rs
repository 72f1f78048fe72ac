use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {row}, column '{column}': cannot parse '{content}' as a number")]
    Parse { row: u64, column: String, content: String },

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("column '{0}' not found in header")]
    MissingColumn(String),

    #[error("need at least {required} data rows, found {rows}")]
    TooFewRows { rows: usize, required: usize },

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] siconf_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status; see [`EXIT_CODES`].
    pub fn exit_code(&self) -> i32 {
        use siconf_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Parse { .. } => 4,
            CliError::Csv(_) => 5,
            CliError::MissingColumn(_) => 6,
            CliError::TooFewRows { .. } => 7,
            CliError::Json(_) => 8,
            CliError::Core(e) => match e {
                E::ConstantColumn { .. } => 10,
                E::TooFewRows { .. } => 11,
                E::DimensionMismatch(_) => 12,
                E::InvalidInput(_) => 13,
                E::RankDeficient => 14,
                E::Singular => 15,
                E::NoConvergence { .. } => 16,
                E::Separation => 17,
                E::DegenerateTreatment => 18,
                E::DenominatorCollapse { .. } => 19,
                E::AllInstrumentsWeak => 20,
                E::Linalg(_) => 21,
            },
        }
    }
}

pub const EXIT_CODES: &str = "\
Exit codes:
   0  success
   2  invalid arguments
   3  file could not be read or written
   4  non-numeric or missing value in the input CSV
   5  malformed CSV (ragged rows, bad encoding)
   6  outcome or treatment column not in the header
   7  fewer than 10 data rows
   8  JSON encoding or decoding failed
  10  covariate with zero variance
  11  too few rows for the requested fit
  12  dimension mismatch
  13  invalid numeric input
  14  rank-deficient design
  15  singular linear system
  16  solver did not converge
  17  complete separation in the propensity model
  18  treatment has zero variance
  19  GCV denominator collapsed at every grid penalty
  20  no usable instrument
  21  linear algebra backend failure";

pub type Result<T> = std::result::Result<T, CliError>;
