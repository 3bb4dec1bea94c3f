use std::path::PathBuf;

/// Errors raised by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller violated an interface contract (shapes, tape ownership, ranges).
    #[error("usage error: {0}")]
    Usage(String),

    /// An operation was recorded outside its mathematical domain.
    #[error("domain error at tape node {node}: {op}")]
    Domain { node: usize, op: &'static str },

    /// A loss or gradient evaluated to a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The dual network's penalized energy is too small to form the ratio.
    #[error("degenerate dual network: denominator {denominator:e} <= {threshold:e}")]
    DegenerateDual { denominator: f64, threshold: f64 },

    /// Training aborted; carries the time step and inner iteration.
    #[error("training aborted at n={n}, k={k}, epoch={epoch:?}: {source}")]
    Training {
        n: usize,
        k: usize,
        epoch: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed parameter file {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
