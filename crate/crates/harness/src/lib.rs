//! Scenario configuration, persistence, orchestration and reporting for the
//! vecbern free-boundary laboratory.

pub mod manifest;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod selftest;

use std::path::PathBuf;

pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] vecbern::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
