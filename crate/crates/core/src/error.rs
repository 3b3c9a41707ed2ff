use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Error, Debug)]
pub enum SimError {
    #[error("parameter layout mismatch: expected `{expected}`, got `{got}`")]
    LayoutMismatch { expected: String, got: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("all selected agents were flagged as outliers; no inliers to aggregate")]
    NoInliers,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data file: {0}")]
    MalformedData(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }
}
