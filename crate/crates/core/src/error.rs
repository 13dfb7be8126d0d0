use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver and its supporting numerics.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, y < 0, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity showed up during evaluation.
    #[error("non-finite value at {location}: {value}")]
    NonFinite { location: String, value: f64 },

    /// Training blew up.
    #[error("divergence at epoch {epoch}: loss {loss} exceeds the limit {limit}")]
    Divergence { epoch: usize, loss: f64, limit: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("psi table error: {0}")]
    PsiTable(String),

    #[error("{0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn non_finite(location: impl Into<String>, value: f64) -> Self {
        Error::NonFinite {
            location: location.into(),
            value,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::Numerical(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
