use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    /// Every violation found, each as `(key path, message)`.
    #[error("invalid config:\n{}", format_violations(.0))]
    Config(Vec<(String, String)>),
    #[error(transparent)]
    Data(#[from] fedgtg_data::DataError),
    #[error(transparent)]
    Model(#[from] fedgtg_models::ModelError),
    #[error(transparent)]
    Server(#[from] fedgtg_server::ServerError),
    #[error(transparent)]
    Client(#[from] fedgtg_client::ClientError),
    #[error(transparent)]
    Metric(#[from] fedgtg_metrics::MetricError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

fn format_violations(v: &[(String, String)]) -> String {
    v.iter().map(|(k, m)| format!("  {k}: {m}")).collect::<Vec<_>>().join("\n")
}

impl FedError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config(vec![(path.into(), message.into())])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = FedError> = std::result::Result<T, E>;
