use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ksynth::Error),
    #[error("writing PNG preview: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 usage/validation, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use ksynth::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::InvalidParameter(_) | E::NegativeFrequency(_) | E::BandOutOfRange { .. } => 2,
                E::NonRealResult { .. } | E::DivisionBlowup { .. } | E::SingularSystem(_) | E::Diverged { .. } => 4,
                _ => 3,
            },
            CliError::Png(_) | CliError::Io(_) | CliError::Json(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
