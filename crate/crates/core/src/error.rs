use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable belongs to a different or cleared tape")]
    DetachedTape,

    #[error("input does not require grad")]
    DetachedInput,

    #[error("function is not deterministic: {0} vs {1}")]
    NonDeterministic(f64, f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("patch {px},{py} of side {side} does not fit in {width}x{height}")]
    PatchOutOfBounds {
        px: usize,
        py: usize,
        side: usize,
        width: usize,
        height: usize,
    },

    #[error("training diverged at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
