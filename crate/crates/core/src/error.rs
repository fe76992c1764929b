use std::path::PathBuf;

/// Errors raised by the simulation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {0}")]
    Config(String),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("no feasible power allocation: {0}")]
    InfeasibleAllocation(String),

    /// The second-order water-level equation has no real root.
    #[error(
        "saturated regime: water-level radicand {radicand:.6e} < 0 with {active} active channels \
         (snr = {snr:.4}, delta = {delta:.6})"
    )]
    Saturated {
        radicand: f64,
        active: usize,
        snr: f64,
        delta: f64,
    },

    #[error("model validity: {0}")]
    ModelValidity(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed data: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    /// True for failures caused by numerics or model validity rather than input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Saturated { .. }
            | Error::ModelValidity(_)
            | Error::Numeric(_)
            | Error::InfeasibleAllocation(_)
            | Error::InfeasibleGeometry(_)
            | Error::Internal(_) => true,
            Error::Trial { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
