use std::path::PathBuf;

use nalgebra::DMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories shared by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("rank error: covariance has rank {rank}, {requested} components requested")]
    Rank { rank: usize, requested: usize },

    #[error("FastICA did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        /// Unmixing matrix of the last iterate.
        last: Box<DMatrix<f64>>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// More bytes are needed before a frame can be decoded.
    #[error("incomplete frame: need {needed} more bytes")]
    Incomplete { needed: usize },

    #[error("unsupported format version {found_major}.{found_minor} (supported major {supported})")]
    Version {
        found_major: u16,
        found_minor: u16,
        supported: u16,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error{}: {source}", on_path(.path))]
    Io {
        path: Option<PathBuf>,
        #[source]
        source: std::io::Error,
    },
}

fn on_path(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| format!(" on {}", p.display()))
        .unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { path: None, source }
    }
}
