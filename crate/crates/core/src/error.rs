use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{axis} = {value} is outside [{min}, {max}]")]
    OutOfBounds {
        axis: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("axis `{axis}`: {reason}")]
    InvalidAxis { axis: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("hypervolume is only computed exactly for 1 to 3 objectives, got {0}")]
    UnsupportedDimension(usize),

    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("safe region is infeasible: {0}")]
    Infeasible(String),

    #[error("operation `{op}` not allowed in state `{status}`")]
    InvalidState { op: &'static str, status: String },

    #[error("schema version mismatch: document has {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed session document: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
