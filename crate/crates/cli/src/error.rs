use std::path::{Path, PathBuf};

/// Errors from the experiment runner. Every variant names the stage or
/// file that failed.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage}: {path}: {source}")]
    Io {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {path}: {source}")]
    Csv {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{stage}: {path}: {source}")]
    Wav {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: asv_vote_core::Error,
    },
    #[error("config {origin}: {msg}")]
    Config { origin: String, msg: String },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{stage}: missing input {path}")]
    MissingInput { stage: &'static str, path: PathBuf },
    #[error("{stage}: {msg}")]
    Invalid { stage: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(stage: &'static str, path: &Path) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.to_path_buf();
    move |source| CliError::Io {
        stage,
        path,
        source,
    }
}

pub(crate) fn csv_err(stage: &'static str, path: &Path) -> impl FnOnce(csv::Error) -> CliError {
    let path = path.to_path_buf();
    move |source| CliError::Csv {
        stage,
        path,
        source,
    }
}

pub(crate) fn core_err(stage: &'static str) -> impl FnOnce(asv_vote_core::Error) -> CliError {
    move |source| CliError::Core { stage, source }
}
