//! Error type shared across the crate, with a stable mapping to CLI exit codes.

use thiserror::Error;

/// Exit-code class of an error: configuration (1), data (2), estimation (3).
/// Validation failures (4) are reported through `ValidationSummary`, not errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: column '{0}' not found in input header")]
    SchemaColumn(String),

    #[error("parse error at line {line}: field '{field}' has unparseable value '{value}'")]
    Parse {
        line: u64,
        field: String,
        value: String,
    },

    #[error("line {line}: label '{label}' in column '{column}' has no mapping")]
    UnmappedLabel {
        line: u64,
        column: String,
        label: String,
    },

    #[error("line {line}: {message}")]
    RowValue { line: u64, message: String },

    #[error("malformed input: {0}")]
    Csv(String),

    #[error("group '{0}' has no records in the selected sample")]
    EmptyGroup(String),

    #[error("stratum {stratum}: insufficient data{side}")]
    InsufficientData { stratum: String, side: String },

    #[error("stratum {stratum}: singular design; offending column(s): {columns}")]
    SingularDesign { stratum: String, columns: String },

    #[error("cell '{cell}' (group {group}) needs a fitted effect but none is available: {reason}")]
    MissingCellFit {
        cell: String,
        group: String,
        reason: String,
    },

    #[error("effects and composition were built over different cell alphabets ({0})")]
    AlphabetMismatch(String),

    #[error("inference error: {0}")]
    Inference(String),
}

impl Error {
    /// Which CLI exit-code class this error belongs to.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Io { .. }
            | Error::SchemaColumn(_)
            | Error::Parse { .. }
            | Error::UnmappedLabel { .. }
            | Error::RowValue { .. }
            | Error::Csv(_)
            | Error::EmptyGroup(_) => ErrorClass::Data,
            Error::InsufficientData { .. }
            | Error::SingularDesign { .. }
            | Error::MissingCellFit { .. }
            | Error::AlphabetMismatch(_)
            | Error::Inference(_) => ErrorClass::Estimation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
