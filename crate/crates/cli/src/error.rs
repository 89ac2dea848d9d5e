use capcal::calibration::DecodeError;
use capcal::evaluation::EvalError;
use capcal::DomainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("query `{0}` is not in the task file")]
    UnknownQuery(String),
    #[error("query `{query_id}`: {source}")]
    Decode {
        query_id: String,
        #[source]
        source: DecodeError,
    },
    #[error("query `{query_id}`: invalid task: {source}")]
    Task {
        query_id: String,
        #[source]
        source: DomainError,
    },
    #[error(transparent)]
    Input(#[from] EvalError),
}

impl CliError {
    /// 1 for configuration and usage, 2 for backend failures, 3 for file
    /// input and output.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownQuery(_) => 1,
            CliError::Decode { source, .. } => {
                if source.backend_error().is_some() {
                    2
                } else {
                    1
                }
            }
            CliError::Task { .. } | CliError::Input(_) => 3,
        }
    }
}
