use thiserror::Error;

pub type Result<T> = std::result::Result<T, PbcError>;

#[derive(Debug, Error)]
pub enum PbcError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("record error at row {row}: {message}")]
    Record { row: usize, message: String },

    #[error("subject error ({id}): {message}")]
    Subject { id: String, message: String },

    #[error("subject {0} has no post-baseline observations")]
    EmptyResponse(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("optimizer did not converge after {iterations} iterations: {message}")]
    NonConvergence { iterations: usize, message: String, last_iterate: Vec<f64> },

    #[error("separation: {0}")]
    Separation(String),

    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    #[error("no rule satisfies false-positive budget {budget}")]
    NoFeasibleRule { budget: f64 },

    #[error("predicted value {value} is too close to zero for a ratio (floor {floor})")]
    NearSingularRatio { value: f64, floor: f64 },

    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
