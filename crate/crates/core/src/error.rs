use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A closed form was evaluated outside the domain where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The caller violated a precondition (empty batch, zero instances, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Brute-force enumeration was refused because it would exceed the cap.
    #[error("enumeration needs {required} configurations, cap is {cap}")]
    CapExceeded { required: u128, cap: u64 },

    #[error("format error in {}: {message} (at {location})", path.display())]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
