use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    /// Classifies a library error raised while working on loaded data.
    pub fn from_core(e: mixinv::Error) -> Self {
        use mixinv::Error as E;
        match e {
            E::Dimension(_) | E::ZeroData => CliError::Data(e.to_string()),
            E::InvalidArgument(_) | E::SizeGuard { .. } | E::PlaneAboveSurface { .. } => CliError::Config(e.to_string()),
            E::SingularRegularizer { .. }
            | E::NotConverged { .. }
            | E::NoRoot(_)
            | E::NotPositiveDefinite
            | E::Chain { .. } => CliError::Numerical(e.to_string()),
        }
    }

    pub fn write(path: &Path, e: std::io::Error) -> Self {
        CliError::Config(format!("cannot write {}: {e}", path.display()))
    }

    pub fn read(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("cannot read {}: {e}", path.display()))
    }
}

impl From<mixinv::Error> for CliError {
    fn from(e: mixinv::Error) -> Self {
        CliError::from_core(e)
    }
}
