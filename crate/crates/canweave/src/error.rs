//! Crate-wide error type.
//!
//! Library functions return [`Result`]; the CLI maps variants onto exit
//! codes (usage problems exit 2, everything else exits 1).

use crate::losses::LossBreakdown;

/// Any failure produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An op was applied to tensors whose shapes do not fit together.
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    /// An op produced NaN or infinity.
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    /// A tape operation was used incorrectly (non-scalar loss, empty tape).
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// A data file could not be parsed. Line numbers are 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Inconsistent sizes, empty inputs, or other bad arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Bad flag/config combinations; the CLI reports these as usage errors.
    #[error("usage: {0}")]
    Usage(String),

    /// The combined training loss left the finite range.
    #[error(
        "non-finite loss at step {step} (l_c={l_c}, l_d={l_d}, l_i={l_i})",
        l_c = breakdown.supervised,
        l_d = breakdown.distribution,
        l_i = breakdown.alignment
    )]
    NonFiniteLoss { step: usize, breakdown: LossBreakdown },

    /// A checkpoint file did not match the expected layout.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// An I/O failure tied to a specific file.
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Convenience constructor for shape complaints that include the
    /// offending dimensions.
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

/// Reads a file to a string, naming the file in any failure.
pub fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}
