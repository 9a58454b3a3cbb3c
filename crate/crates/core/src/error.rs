use std::path::PathBuf;

use crate::bayes::Diagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: value {value} outside [1, 5]")]
    OutOfRange {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("row {row}: duplicate item id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("item {0:?} has no judge score")]
    MissingJudge(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("state became non-finite at rk4 step {step}")]
    NonFiniteState { step: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("unknown rubric id {0}")]
    UnknownRubric(u32),
    #[error("divergence rate {rate:.3} after warmup exceeds 10%")]
    Divergences { rate: f64 },
    #[error("convergence gate failed: max R-hat {max_rhat:.4}, min ESS {min_ess:.1}")]
    Convergence {
        max_rhat: f64,
        min_ess: f64,
        diagnostics: Box<Diagnostics>,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
