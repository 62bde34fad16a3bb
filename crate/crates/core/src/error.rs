use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("degenerate population: no rows with label {missing}")]
    DegeneratePopulation { missing: u8 },

    #[error("infeasible stratification: label {label} has {count} rows, need at least {folds}")]
    InfeasibleStratification { label: u8, count: usize, folds: usize },

    #[error("invalid ratio prediction {0}")]
    InvalidPrediction(f64),

    #[error("fit failed on fold {fold}: {source}")]
    FoldFit {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ratio table has no entry for support point {0:?}")]
    IncompleteTable((usize, usize)),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("labels contain a single class")]
    DegenerateLabels,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("every learner in the library failed")]
    EmptyLibrary,

    #[error("weight optimization failed: {0}")]
    Optimization(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("policy maps exposure {0} outside the support")]
    Policy(i64),

    #[error("scenario mismatch: {0}")]
    Scenario(String),

    #[error("model cannot be serialized: {0}")]
    NotSerializable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
