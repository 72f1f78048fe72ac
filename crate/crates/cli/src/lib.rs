//! Command-line surface of the confounder selection toolkit: CSV ingestion,
//! method invocation, benchmark orchestration and JSON/CSV reports.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod report;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
pub use ingest::{ingest_csv, Dataset};
pub use report::{emit_results, Format, RunConfig, SelectionReport};
