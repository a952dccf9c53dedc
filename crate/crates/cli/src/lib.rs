//! Command-line harness for bvld: config parsing, run orchestration, series
//! ingestion, output files and the `verify` report.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod verify;

pub use commands::{run, Outcome};
pub use config::{Command, RunConfig};
pub use error::{CliError, CliResult, IngestError, EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION, EXIT_VERIFY};
pub use ingest::{ingest_series, prepare_series, IngestedSeries};
pub use verify::{run_verify, VerifyReport, VerifyRow};
