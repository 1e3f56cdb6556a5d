use thiserror::Error;

/// Errors raised by the library.
///
/// The CLI maps [`Error::Config`] and [`Error::Io`] to exit status 2 and
/// everything else to exit status 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("{solver} did not converge after {iterations} iterations")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("eigenvalue {value:.3e} at index {index} is below the resolvable floor {floor:.3e}")]
    BelowFloor { index: usize, value: f64, floor: f64 },

    #[error("stream fingerprints differ ({0:016x} vs {1:016x}); runs did not share samples")]
    FingerprintMismatch(u64, u64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by user input files rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
