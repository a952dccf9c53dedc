use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] bvld::Error),

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error("{path}: {detail}")]
    Io { path: String, detail: String },

    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("parse error at row {row}, column '{column}': {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },

    #[error("column '{column}' not found (available: {available})")]
    MissingColumn { column: String, available: String },

    #[error("series has {rows} rows, need at least 2")]
    EmptySeries { rows: usize },

    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => core_exit_code(e),
            CliError::VerifyFailed(_) => EXIT_VERIFY,
            _ => EXIT_VALIDATION,
        }
    }
}

fn core_exit_code(e: &bvld::Error) -> i32 {
    use bvld::Error::*;
    match e {
        LineSearchFailure { .. } | DomainFailure { .. } | Bracket { .. } | InsufficientData { .. } | NoValidSamples => {
            EXIT_SOLVER
        }
        AtStep { source, .. } => core_exit_code(source),
        _ => EXIT_VALIDATION,
    }
}

pub type CliResult<T> = Result<T, CliError>;
