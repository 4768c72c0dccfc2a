use pbc_core::PbcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] PbcError),

    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },

    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                PbcError::InvalidInput(_) => 2,
                PbcError::Schema(_)
                | PbcError::Record { .. }
                | PbcError::Subject { .. }
                | PbcError::EmptyResponse(_)
                | PbcError::LengthMismatch { .. }
                | PbcError::SingularDesign { .. }
                | PbcError::NearSingularRatio { .. }
                | PbcError::Io(_)
                | PbcError::Csv(_)
                | PbcError::Json(_) => 3,
                PbcError::NonConvergence { .. } | PbcError::Conditioning(_) | PbcError::BootstrapFailures { .. } => 4,
                PbcError::Separation(_) => 5,
                PbcError::NoFeasibleRule { .. } => 6,
            },
            CliError::Output { .. } | CliError::Mismatch(_) => 1,
        }
    }
}
