use thiserror::Error;

/// Failure of a model fit. Kept separate from [`Error`] because the engines
/// retry on it and the simulation runner records it as data.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("design matrix is rank deficient")]
    Singular,
    #[error("need more observations ({n}) than parameters ({k})")]
    TooFewRows { n: usize, k: usize },
    #[error("fit did not converge (separation or monotone likelihood)")]
    NonConverged,
    #[error("no events in survival data")]
    NoEvents,
    #[error("empty risk set at time {0}")]
    EmptyRiskSet(f64),
    #[error("non-finite value in model data")]
    NonFinite,
    #[error("invalid model input: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("column `{column}` is a {role} and must be fully observed (row {row} is missing)")]
    ForbiddenMissing { row: usize, column: String, role: String },
    #[error("column `{column}` is binary but row {row} holds {value}")]
    NotBinary { row: usize, column: String, value: f64 },
    #[error("column `{column}` row {row}: {msg}")]
    BadValue { row: usize, column: String, msg: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("fill for column `{column}` has {got} values, expected {expected}")]
    FillShape { column: String, expected: usize, got: usize },
    #[error("formula syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("cell in column `{column}` row {row} is missing")]
    MissingCell { column: String, row: usize },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("imputation {imputation} aborted after {attempts} attempts: {reason}")]
    Aborted { imputation: usize, attempts: usize, reason: FitError },
    #[error("model inconsistency: {0}")]
    Model(String),
    #[error("pooling: {0}")]
    Pooling(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
