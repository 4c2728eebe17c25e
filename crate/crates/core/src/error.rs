use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("custom gradient for {op} returned {got} gradients for {expected} inputs or mismatched shapes")]
    GradContract {
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid quantizer configuration: {0}")]
    Quant(String),
    #[error("degenerate quantization range at {site}: {reason}")]
    DegenerateRange { site: String, reason: String },
    #[error("value {value} at index {index} is not on the quantization grid")]
    OffGrid { index: usize, value: f64 },
    #[error("invalid SSM parameters: {0}")]
    Ssm(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("not a {0} container")]
    BadMagic(&'static str),
    #[error("malformed container: {0}")]
    Format(String),
    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("training diverged: non-finite loss at iteration {iter}, first non-finite node: {node}")]
    Diverged { iter: usize, node: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
