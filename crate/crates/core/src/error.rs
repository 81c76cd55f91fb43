use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Inconsistent or invalid training/evaluation data.
    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite gradient in layer `{layer}`")]
    NonFiniteGradient { layer: String },

    /// Score tables do not cover the same video ids. `difference` is the
    /// symmetric difference of the id sets.
    #[error("score tables are misaligned; ids not present in every table: {difference:?}")]
    Alignment { difference: Vec<String> },

    #[error("video `{video}`: missing feature file {path}")]
    MissingFile { video: String, path: PathBuf },

    #[error("video `{video}`: bad magic in {path} (expected {expected:?})")]
    BadMagic {
        video: String,
        path: PathBuf,
        expected: &'static str,
    },

    #[error("video `{video}`: {what} dimension {found} does not match corpus dimension {expected}")]
    DimMismatch {
        video: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("video `{video}`: label {label} is not a valid class id (classes: {classes})")]
    BadLabel {
        video: String,
        label: i64,
        classes: usize,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
