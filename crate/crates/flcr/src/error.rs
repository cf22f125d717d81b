use std::path::PathBuf;

use flcr_core::score_test::PipelineError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Exit code for bad data, flags or files.
pub const EXIT_DATA: i32 = 2;
/// Exit code for failures of the numerical machinery.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] flcr_core::Error),

    #[error(transparent)]
    Pipeline(#[from] PipelineError),

    #[error("JSON serialization failed: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Core(e) => e.is_numerical(),
            Error::Pipeline(e) => e.source.is_numerical(),
            _ => false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_DATA
        }
    }
}
