use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cfdbal::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("csv: {0}")]
    Csv(String),

    #[error("config: {0}")]
    Config(String),

    #[error("column '{0}' is not in the CSV header")]
    MissingColumn(String),

    #[error("missing values in rows {}", list_rows(.rows))]
    MissingValues { rows: Vec<usize> },

    #[error("parse error in column '{column}', row {row}: {message}")]
    Parse { column: String, row: usize, message: String },

    #[error("column '{0}' has zero range and cannot be scaled to [0, 1]")]
    ZeroRange(String),
}

fn list_rows(rows: &[usize]) -> String {
    const SHOWN: usize = 20;
    let head: Vec<String> = rows.iter().take(SHOWN).map(|r| r.to_string()).collect();
    if rows.len() > SHOWN {
        format!("{} and {} more", head.join(", "), rows.len() - SHOWN)
    } else {
        head.join(", ")
    }
}

/// Machine-readable form written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<usize>>,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 3 for numerical failures, 2 for everything the user can fix in the input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(_) => "validation",
            CliError::Io { .. } => "io",
            CliError::Csv(_) => "csv",
            CliError::Config(_) => "config",
            CliError::MissingColumn(_) => "missing_column",
            CliError::MissingValues { .. } => "missing_values",
            CliError::Parse { .. } => "parse",
            CliError::ZeroRange(_) => "zero_range",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
            rows: match self {
                CliError::MissingValues { rows } => Some(rows.clone()),
                _ => None,
            },
        }
    }
}
