use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Config(#[from] toml::de::Error),

    #[error("{0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("cannot write json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("model validation failed: {0}")]
    ModelValidation(String),

    #[error(transparent)]
    Lab(#[from] ouflow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ModelValidation(_) => 2,
            CliError::Lab(e) if e.is_model_error() => 2,
            CliError::Lab(ouflow::Error::InvalidConfig(_)) => 1,
            CliError::Lab(_) => 3,
            _ => 1,
        }
    }
}
