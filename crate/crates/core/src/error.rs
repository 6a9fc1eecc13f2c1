use thiserror::Error;

/// Errors produced by the underdetermination toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("input to {0} has zero variance")]
    DegenerateVariance(&'static str),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown circuit template {0:?}")]
    UnknownTemplate(String),

    #[error("invalid circuit template: {0}")]
    InvalidTemplate(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed dataset: {0}")]
    Malformed(String),

    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("IDX file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("class {0} not present in dataset")]
    MissingClass(u8),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::DegenerateVariance(_) => "degenerate_variance",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Empty(_) => "empty_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownTemplate(_) => "unknown_template",
            Error::InvalidTemplate(_) => "invalid_template",
            Error::Diverged { .. } => "diverged",
            Error::Member { source, .. } => source.kind(),
            Error::Malformed(_) => "malformed_dataset",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::MissingClass(_) => "missing_class",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
