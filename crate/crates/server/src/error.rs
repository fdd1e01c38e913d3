use fedgtg_losses::LossError;
use fedgtg_models::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{which} training diverged at step {step}: loss {loss}")]
    Diverged { which: &'static str, step: usize, loss: f64 },
    #[error("client {client_id}: {message}")]
    Client { client_id: usize, message: String },
    #[error("run log: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ServerError> = std::result::Result<T, E>;
