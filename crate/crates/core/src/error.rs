use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{column}` (header: {header})")]
    MissingColumn { column: String, header: String },

    #[error("no usable rows left after cleaning {path}")]
    EmptyAfterCleaning { path: PathBuf },

    #[error("duplicate date {0}")]
    DuplicateDate(chrono::NaiveDate),

    #[error("series too short: need {needed}, have {actual}")]
    SeriesTooShort { needed: usize, actual: usize },

    #[error("history too short for forecast: need {needed}, have {actual}")]
    HistoryTooShort { needed: usize, actual: usize },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("every candidate ARIMA fit failed")]
    AllFitsFailed,

    #[error("invalid ARIMA order ({p},{d},{q})")]
    InvalidOrder { p: usize, d: usize, q: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("feature alignment error: {0}")]
    AlignmentError(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("return of {0} implies total loss")]
    RuinReturn(f64),

    #[error("walk {0} has no prediction and no failure record")]
    CoverageGap(usize),

    #[error("no completed trials")]
    NoCompletedTrials,

    #[error("differences have zero variance")]
    ZeroVarianceDifferences,

    #[error("regressor has zero variance")]
    DegenerateRegressor,

    #[error("weights sum to {0}, expected 1")]
    WeightSumInvalid(f64),

    #[error("components share no common evaluation window")]
    NoCommonStart,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("incomplete artifact: {0}")]
    IncompleteArtifact(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
