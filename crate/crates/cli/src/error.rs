use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Core(#[from] predregret::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// 2 for configuration problems, 3 for failed verification, 4 for
    /// numerical non-convergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use predregret::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Verification(_) => 3,
            CliError::Core(e) => match e {
                E::NonConvergence { .. } | E::NumericalFailure(_) | E::NumericalDegeneracy(_) => 4,
                _ => 2,
            },
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
