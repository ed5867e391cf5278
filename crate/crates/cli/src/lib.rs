//! Command-line plumbing for cfdbal: CSV ingestion, run configuration and
//! JSON/CSV outputs.

pub mod config;
pub mod error;
pub mod ingest;
pub mod run;

pub use config::{ColumnSpec, RunConfig, WeightMethod};
pub use error::{CliError, Result};
pub use ingest::{ingest_csv, ColumnScaling, Ingested};
pub use run::{kernel_check, run_estimate, run_simulation, run_weights, EstimateReport, VERSION};
