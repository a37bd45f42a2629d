use qpkron::ErrorCategory;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] qpkron::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("output error: {0}")]
    Output(String),

    #[error("{0} oracle check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    /// Process exit code: 2 config, 3 divergence, 4 numerical breakdown, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Validation => 2,
                ErrorCategory::Divergence => 3,
                ErrorCategory::Breakdown => 4,
            },
            CliError::Io(_) | CliError::Output(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_categories() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(qpkron::Error::Validation("x".into())).exit_code(), 2);
        let div = qpkron::Error::Divergence { ratio: 1.5, steps: 3 };
        assert_eq!(CliError::Core(div).exit_code(), 3);
        assert_eq!(CliError::Core(qpkron::Error::Breakdown("x".into())).exit_code(), 4);
        assert_eq!(CliError::ChecksFailed(1).exit_code(), 1);
    }
}
