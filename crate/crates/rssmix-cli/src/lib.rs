//! Library surface of the study runner: configuration, the replicated
//! study/case-study pipelines, and plot-data emission. The binary in
//! `main.rs` is a thin command-line layer over these modules.

pub mod config;
pub mod plots;
pub mod study;

/// Process-level error classification; each variant maps to one of the
/// documented exit codes (2 config, 3 data, 4 non-convergence budget).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }
}

impl From<rssmix::error::Error> for CliError {
    fn from(e: rssmix::error::Error) -> Self {
        match e {
            rssmix::error::Error::EmNonConvergence { .. } => {
                CliError::NonConvergence(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io: {e}"))
    }
}
