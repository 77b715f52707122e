use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file parsed but violated its format; names the file and the field.
    #[error("{path}: bad {field}: {msg}")]
    Format {
        path: String,
        field: String,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// The sensor output reached the supply voltage, so the divider equation is undefined.
    #[error("sensor saturated: v_out {v_out} >= v_in {v_in}")]
    Saturation { v_out: f64, v_in: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_err(path: &Path, field: &str, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        field: field.to_string(),
        msg: msg.into(),
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Fails with `InvalidArgument` unless `a == b`.
pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(invalid(format!("{what}: expected dimension {expected}, got {got}")))
    }
}
