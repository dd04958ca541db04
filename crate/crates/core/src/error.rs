use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("architecture has no layers")]
    EmptyArchitecture,

    #[error("permutation domain is empty")]
    EmptyDomain,

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("block count {k} is invalid for a {rows}x{cols} matrix (need 1 <= k <= {})", rows.min(cols))]
    InvalidBlockCount { k: usize, rows: usize, cols: usize },

    #[error("sparsity {0} is outside (0, 1]")]
    InvalidSparsity(f64),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("index ({row}, {col}) out of bounds for a {rows}x{cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("nonzero weight at ({row}, {col}) lies outside every block")]
    StructureViolation { row: usize, col: usize },

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated input while reading {0}")]
    Truncated(&'static str),

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
