use std::path::PathBuf;

/// Errors produced anywhere in the explanation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or mismatched input data (shapes, non-finite pixels, empty sets).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid hyperparameters or unsupported configuration.
    #[error("config error: {0}")]
    Config(String),

    /// The classifier cannot provide what was asked of it (e.g. input gradients).
    #[error("capability error: {0}")]
    Capability(String),

    /// Optimization produced a non-finite loss.
    #[error("numeric error at epoch {epoch}: {message}")]
    Numeric { epoch: usize, message: String },

    /// The synthetic testbed failed to fit its own data.
    #[error("training error: {0}")]
    Training(String),

    /// A saliency file or manifest could not be decoded.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported saliency file version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the numerics rather than by the caller's inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::Training(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
