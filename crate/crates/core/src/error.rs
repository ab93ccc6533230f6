use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("grid window out of bounds: {0}")]
    Bounds(String),

    #[error("missing data inside sampling window at (t, row, col): {cells:?}")]
    MissingData { cells: Vec<(usize, usize, usize)> },

    #[error("series too short: need {needed}, have {have}")]
    Length { needed: usize, have: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("lag range error: {0}")]
    Range(String),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("non-finite activation at stage {stage}")]
    NonFiniteActivation { stage: String },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("variable in column {column} is constant over the training window")]
    ConstantVariable { column: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("degenerate loss: {0}")]
    DegenerateLoss(String),

    #[error("empty forecast: L must be at least 2 (got {0})")]
    EmptyForecast(usize),

    #[error("MAPE undefined: truth value at index {index} is zero")]
    MapeUndefined { index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
