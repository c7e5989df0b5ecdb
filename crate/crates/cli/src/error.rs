use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("model run failed at design row {index}, theta {theta:?}: {message}")]
    ModelRun { index: usize, theta: Vec<f64>, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Numerical(_) | CliError::ModelRun { .. } => 4,
            CliError::Io(_) => 1,
        }
    }
}

pub(crate) fn io<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

pub(crate) fn num<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}
