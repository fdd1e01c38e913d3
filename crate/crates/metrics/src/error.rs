use fedgtg_data::DataError;
use fedgtg_models::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("contract violation: {0}")]
    Contract(String),
    /// The metric has no value for this input (e.g. forgetting of one task).
    #[error("undefined: {0}")]
    Undefined(String),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;
