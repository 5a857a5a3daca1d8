use l1dfl_core::losses::LossError;
use l1dfl_core::metrics::MetricsError;
use l1dfl_core::optim::OptimError;
use l1dfl_core::phantom::PhantomError;
use l1dfl_core::volgrid::VvolError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("output collision: {} already exists and is not empty (use --force to overwrite)", .0.display())]
    Collision(PathBuf),
    #[error("{0}")]
    Input(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("gradient check failed for: {0}")]
    GradcheckFailed(String),
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::GradcheckFailed(_) | CliError::Write { .. } => 1,
            CliError::ConfigParse(_) | CliError::Config(_) => 2,
            CliError::Collision(_) => 3,
            CliError::Input(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }

    /// Prefixes input-contract messages with `ctx`.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{ctx}: {m}")),
            other => other,
        }
    }

    pub fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write { path: path.to_path_buf(), source }
    }

    pub fn read(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("cannot read {}: {e}", path.display()))
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::BadConfig(_) | LossError::UnknownLoss(_) => CliError::Config(e.to_string()),
            LossError::GeometryMismatch(m) => CliError::Input(format!("geometry mismatch: {m}")),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::GeometryMismatch(m) => CliError::Input(format!("geometry mismatch: {m}")),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            OptimError::Loss(l) => l.into(),
            OptimError::Metrics(m) => m.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<(PathBuf, VvolError)> for CliError {
    fn from((path, e): (PathBuf, VvolError)) -> Self {
        CliError::Input(format!("{}: {} ({})", path.display(), e, e.code()))
    }
}
