use std::path::PathBuf;

/// Errors raised by the tomography pipeline.
///
/// Variants are split between bad input (caller can fix it) and numerical
/// failures (the data or configuration is ill-posed); the CLI maps the two
/// groups onto different exit codes.
#[derive(Debug, thiserror::Error)]
pub enum TomoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for cutoff {cutoff}")]
    IndexOutOfRange { index: usize, cutoff: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unphysical signal at setting {index}: value {value} gives probability outside [0, 1]")]
    UnphysicalSignal { index: usize, value: f64 },

    #[error("k-grid too coarse: dk = {dk} exceeds pi / x_max = {limit}")]
    Aliasing { dk: f64, limit: f64 },

    #[error("rank-deficient design (smallest/largest singular value {ratio:e}); add settings or enable ridge")]
    RankDeficient { ratio: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

impl TomoError {
    /// True for failures caused by the numerical problem itself rather than
    /// malformed or missing input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, TomoError::RankDeficient { .. } | TomoError::Numerical(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TomoError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TomoError>;
