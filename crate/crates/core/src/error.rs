use thiserror::Error;

use crate::data::Stage;

#[derive(Debug, Error)]
pub enum DtrError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("offset {offset} leaves non-positive reward {min_reward} at row {row}")]
    NonPositiveReward { offset: f64, min_reward: f64, row: usize },

    #[error("propensity {value} at row {row} ({field}) is below the positivity floor {floor}")]
    PositivityViolation { row: usize, field: &'static str, value: f64, floor: f64 },

    #[error("policy for stage {expected:?} received a stage {got:?} history")]
    StageMismatch { expected: Stage, got: Stage },

    #[error("surrogate {0} does not support this operation")]
    UnsupportedSurrogate(&'static str),

    #[error("surrogate {0} is not Fisher consistent; set allow_inconsistent_surrogate to train with it")]
    InconsistentSurrogate(&'static str),

    #[error("unknown surrogate key {0:?}")]
    UnknownSurrogate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite objective at epoch {epoch}, step {step}: {detail}")]
    NonFinite { epoch: usize, step: usize, detail: String },

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid setting id {0}; expected 1..=5")]
    InvalidSetting(u8),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DtrError>;
