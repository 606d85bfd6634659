//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Errors carry enough context
//! to name the offending field, dimension or file, and map onto the CLI
//! exit-code contract (0 success, 2 validation, 3 data, 4 numeric fault).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed container or serialized file.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Well-formed file that we deliberately do not handle.
    #[error("unsupported format in {path}: {field} = {value}")]
    UnsupportedFormat {
        path: PathBuf,
        field: String,
        value: String,
    },

    /// Bad configuration value or inconsistent config combination.
    #[error("config error: {0}")]
    Config(String),

    /// Manifest or plan fails a structural check.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor/vector dimensions do not conform.
    #[error("shape error in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// Input too short to produce any output.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Input present but statistically unusable (single frame, constant
    /// sequence, single-class data, all-zero target).
    #[error("degenerate {what}: {detail}")]
    Degenerate { what: &'static str, detail: String },

    /// Checkpoint or model file is internally inconsistent.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// NaN or infinity produced by a numeric operation.
    #[error("numeric fault in {context}: {detail}")]
    NumericFault { context: String, detail: String },

    /// Data file contents disagree with the manifest or with each other.
    #[error("data error: {0}")]
    Data(String),

    /// A named pipeline stage failed; wraps the underlying error.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// Attach a stage name to any error bubbling out of a pipeline step.
pub fn in_stage<T>(stage: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    })
}

impl Error {
    pub fn degenerate(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Degenerate {
            what,
            detail: detail.into(),
        }
    }

    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// Process exit code for the CLI: 2 validation, 3 data, 4 numeric fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Shape { .. } => 2,
            Error::NumericFault { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
