use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable is detached from this tape")]
    Detached,
    #[error("no dependency: score does not depend on the requested input")]
    NoDependency,
    #[error("invalid architecture at {layer}: {reason}")]
    Arch { layer: String, reason: String },
    #[error("empty class slice")]
    EmptySlice,
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("no semantic profile entry for domain {domain}, class {class}")]
    MissingProfile { domain: usize, class: usize },
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassIndex { class: usize, num_classes: usize },
    #[error("degenerate boundary: score rows {0} and {1} are identical")]
    DegenerateBoundary(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: line {line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}; config: {config}")]
    NonFinite { step: usize, config: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Arch { .. } | Error::InvalidArgument(_) => 1,
            Error::Csv { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::EmptySlice
            | Error::MissingProfile { .. }
            | Error::Checkpoint(_) => 2,
            _ => 3,
        }
    }
}
