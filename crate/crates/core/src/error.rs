use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty data set")]
    EmptyData,

    #[error("non-finite value in input: {0}")]
    NonFiniteInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("component {component} degenerated: {reason}")]
    DegenerateComponent { component: usize, reason: String },

    #[error("input block of component {0} is not positive definite")]
    SingularInputBlock(usize),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("parameter `{name}` must be strictly positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("matrix of size {size} is not positive definite even with jitter {jitter:e}")]
    FactorizationFailure { size: usize, jitter: f64 },

    #[error("every optimizer start failed: {0}")]
    AllStartsFailed(String),

    #[error("via-points {first} and {second} share an input but have conflicting outputs and zero noise")]
    DuplicateViaInput { first: usize, second: usize },

    #[error("Riccati recursion ill-conditioned at step {step} (condition number {condition:e})")]
    IllConditionedRiccati { step: usize, condition: f64 },

    #[error("batch element {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("non-finite value at row {row}, column `{column}`")]
    NonFiniteValue { row: usize, column: String },

    #[error("ragged demonstrations: {0}")]
    RaggedDemo(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyData => "EmptyData",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DegenerateComponent { .. } => "DegenerateComponent",
            Error::SingularInputBlock(_) => "SingularInputBlock",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NonPositiveParam { .. } => "NonPositiveParam",
            Error::InvalidModel(_) => "InvalidModel",
            Error::FactorizationFailure { .. } => "FactorizationFailure",
            Error::AllStartsFailed(_) => "AllStartsFailed",
            Error::DuplicateViaInput { .. } => "DuplicateViaInput",
            Error::IllConditionedRiccati { .. } => "IllConditionedRiccati",
            Error::AtIndex { source, .. } => source.kind(),
            Error::ParseError { .. } => "ParseError",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::RaggedDemo(_) => "RaggedDemo",
            Error::InvalidParam(_) => "InvalidParam",
            Error::Json(_) => "ParseError",
            Error::Csv(_) => "ParseError",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn at(self, index: usize) -> Error {
        Error::AtIndex {
            index,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        });
    }
    Ok(())
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::NonPositiveParam { name, value });
    }
    Ok(())
}
