//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, RomError>;

/// Errors raised anywhere in the toolkit.
///
/// The CLI maps these onto exit codes: configuration problems exit 2,
/// numerical failures exit 3, I/O and file-format problems exit 4.
#[derive(Debug)]
pub enum RomError {
    /// Dimension or shape mismatch between operands.
    Shape(String),
    /// Input contained NaN or infinite entries.
    NonFinite(String),
    /// A matrix was singular to working tolerance; carries the pivot position.
    Singular { context: String, pivot: usize },
    /// Cholesky hit a non-positive pivot; carries the pivot index.
    NotPositiveDefinite { context: String, pivot: usize },
    /// An iterative method failed to converge.
    Convergence(String),
    /// Invalid argument or state outside shape/finiteness problems.
    Invalid(String),
    /// Configuration file or pipeline configuration problem.
    Config(String),
    /// File format violation (bad magic, version, truncation, inconsistent rows).
    Format(String),
    /// Underlying I/O failure with the path involved.
    Io { path: String, source: std::io::Error },
}

impl RomError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        RomError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Exit code class used by the CLI: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RomError::Config(_) => 2,
            RomError::Io { .. } | RomError::Format(_) => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for RomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RomError::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            RomError::NonFinite(msg) => write!(f, "non-finite input: {msg}"),
            RomError::Singular { context, pivot } => {
                write!(f, "singular system in {context} (pivot {pivot})")
            }
            RomError::NotPositiveDefinite { context, pivot } => {
                write!(f, "matrix not positive definite in {context} (pivot {pivot})")
            }
            RomError::Convergence(msg) => write!(f, "failed to converge: {msg}"),
            RomError::Invalid(msg) => write!(f, "invalid input: {msg}"),
            RomError::Config(msg) => write!(f, "configuration error: {msg}"),
            RomError::Format(msg) => write!(f, "file format error: {msg}"),
            RomError::Io { path, source } => write!(f, "io error on {path}: {source}"),
        }
    }
}

impl std::error::Error for RomError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            RomError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
