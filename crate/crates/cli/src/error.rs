use std::fmt;
use std::path::Path;

use refcast::autodiff::AutodiffError;
use refcast::data::DataError;
use refcast::graph::GraphError;
use refcast::trainer::TrainError;

pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_MISMATCH: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// An error message paired with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {err}", path.display()) }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn with_code(code: u8, err: impl fmt::Display) -> CliError {
    CliError { code, message: err.to_string() }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => with_code(EXIT_IO, e),
            DataError::Graph(g) => g.into(),
            _ => with_code(EXIT_USAGE, e),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NotConverged { .. } => with_code(EXIT_NUMERIC, e),
            _ => with_code(EXIT_USAGE, e),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::ConfigMismatch(_) | AutodiffError::Checkpoint(_) => with_code(EXIT_MISMATCH, e),
            AutodiffError::InvalidConfig(_) | AutodiffError::ShapeMismatch(_) => with_code(EXIT_USAGE, e),
            _ => with_code(EXIT_IO, e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Graph(g) => g.into(),
            TrainError::Autodiff(a) => a.into(),
            TrainError::Diverged { .. } => with_code(EXIT_NUMERIC, e),
            TrainError::EmptyEval | TrainError::NoReferences | TrainError::InvalidConfig(_) => with_code(EXIT_USAGE, e),
        }
    }
}
