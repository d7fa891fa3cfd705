use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<flowkd::Error> for CliError {
    fn from(e: flowkd::Error) -> Self {
        use flowkd::Error as E;
        let msg = e.to_string();
        match e {
            E::NonFinite(_) | E::NanLoss { .. } => CliError::Numerical(msg),
            E::Data(_) | E::Checkpoint(_) | E::Io(_) | E::Json(_) => CliError::Data(msg),
            E::Shape(_) | E::InvalidArgument(_) | E::Untaped | E::MissingGradients => CliError::Config(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn config<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}
