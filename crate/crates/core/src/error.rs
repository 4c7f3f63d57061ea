use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular construction: {0}")]
    Singular(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("all mixture log-weights are -inf ({0})")]
    Underflow(String),

    #[error("quantile bracket does not contain the root for u = {0}")]
    BracketFailure(f64),

    #[error("non-finite log-density at t = {t}")]
    NonFiniteDensity { t: usize },

    #[error("update failed at iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("chain schema mismatch: file has version {found}, expected {expected}")]
    Schema { found: u32, expected: u32 },

    #[error("corrupt chain file at record {record}: {msg}")]
    Corrupt { record: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}
