//! Configuration-driven commands behind the command-line tool. Each command
//! reads and writes files in the experiment's output directory and reports
//! progress on a caller-supplied writer.

mod commands;
mod config;
pub mod selftest;

pub use commands::{cmd_compare, cmd_evaluate, cmd_prepare, cmd_render_map, cmd_train, parse_predictions, Predictions};
pub use config::{
    ClassTermName, CompareSection, DataSource, ExperimentConfig, RenderSection, TrainingSection, VariantName,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    /// Bad configuration, missing or malformed input files.
    #[error("{0}")]
    Input(String),
    /// Training stopped on a non-finite value.
    #[error("{0}")]
    Abort(String),
    /// Artifacts that do not belong together (checkpoint vs data, prediction
    /// files over different test sets).
    #[error("{0}")]
    Mismatch(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Input(_) => 2,
            AppError::Abort(_) => 3,
            AppError::Mismatch(_) => 4,
        }
    }
}

impl From<crate::data::DataError> for AppError {
    fn from(e: crate::data::DataError) -> Self {
        AppError::Input(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Input(format!("I/O error: {e}"))
    }
}
