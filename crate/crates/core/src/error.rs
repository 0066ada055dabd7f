use std::path::PathBuf;

/// Errors produced by the core toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor shape {shape:?} needs {expected} values, got {found}")]
    ShapeData { shape: Vec<usize>, expected: usize, found: usize },

    #[error("tensor contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("layer {layer}: dimension mismatch, expected {expected}, found {found}")]
    LayerDimension { layer: usize, expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid permutation: {0}")]
    Permutation(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("worker index {worker} out of range for {workers} workers")]
    WorkerOutOfRange { worker: usize, workers: usize },

    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("cost matrix has a non-finite entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("brute-force enumeration needs {needed} assignments, cap is {cap}")]
    EnumerationCap { needed: String, cap: u64 },

    #[error("layer {layer} is convolutional; use repurpose_conv for channel reassignment")]
    UnsupportedLayer { layer: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("certificate refused: {0}")]
    CertificateRefused(String),

    #[error("memory overflow: {needed} bytes per node exceed {available}")]
    MemoryOverflow { needed: u64, available: u64 },

    #[error("missing tensor file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: expected {expected} bytes, found {found}", path.display())]
    ByteCount { path: PathBuf, expected: u64, found: u64 },

    #[error("unknown activation kind {0:?}")]
    UnknownActivation(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u64),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by malformed or inconsistent input files.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingFile(_)
                | Error::ByteCount { .. }
                | Error::UnknownActivation(_)
                | Error::UnsupportedVersion(_)
                | Error::Manifest(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::ShapeData { .. }
                | Error::NonFinite { .. }
                | Error::LayerDimension { .. }
                | Error::Shape(_)
                | Error::Partition(_)
                | Error::Config(_)
                | Error::UnsupportedLayer { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
