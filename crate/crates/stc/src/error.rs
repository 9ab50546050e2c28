use thiserror::Error;

/// Errors across the toolkit. Variants map onto the CLI exit-code contract:
/// `Format` means an unreadable or foreign file (exit 4), `Shape`, `Kind`,
/// and `Empty` mean mismatched dimensions, mismatched code kinds, or nothing
/// to search (exit 5), `Grid` and `Config` mean an invalid request (exit 2),
/// `Capacity` means a refused resource estimate (exit 3).
#[derive(Debug, Error)]
pub enum StcError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("code kind mismatch: expected {expected}, got {got}")]
    Kind {
        expected: &'static str,
        got: &'static str,
    },

    #[error("empty {0}: nothing to search")]
    Empty(&'static str),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StcError>;
