use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("analysis error: {0}")]
    Analysis(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Analysis(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Wraps an error from a lower layer into one failure class, with context.
pub(crate) trait Context<T> {
    fn config(self, what: impl FnOnce() -> String) -> Result<T>;
    fn data(self, what: impl FnOnce() -> String) -> Result<T>;
    fn training(self, what: impl FnOnce() -> String) -> Result<T>;
    fn analysis(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: std::fmt::Display> Context<T> for std::result::Result<T, E> {
    fn config(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError::Config(format!("{}: {e}", what())))
    }
    fn data(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError::Data(format!("{}: {e}", what())))
    }
    fn training(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError::Training(format!("{}: {e}", what())))
    }
    fn analysis(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError::Analysis(format!("{}: {e}", what())))
    }
}
