use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {0:?}: a shape needs at least one dimension and every extent must be >= 1")]
    InvalidShape(Vec<usize>),

    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("corrupted switch map: index {index} at pooled position {position} is outside a {window}-element window")]
    CorruptedSwitch {
        position: usize,
        index: u32,
        window: usize,
    },

    #[error("label {label} at row {row} is outside [0, {classes})")]
    InvalidLabel {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("non-finite gradient in `{param}` (max |g| over finite entries = {max_abs:e})")]
    NonFiniteGradient { param: String, max_abs: f64 },

    #[error("{phase} diverged at iteration {iter}: loss {loss:e} exceeds {limit:e}")]
    Diverged {
        phase: String,
        iter: u64,
        loss: f64,
        limit: f64,
    },

    #[error("{}: load error at byte offset {offset}: {reason}", path.display())]
    Load {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("image output failed: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
