//! Batch front end: CSV in, JSON report (and optional CSV table) out.

pub mod analysis;
pub mod config;
pub mod error;
pub mod ingest;
pub mod panel;

pub use analysis::{run_analysis, Report};
pub use config::{AnalysisConfig, Overrides};
pub use error::{CliError, Result};
pub use ingest::{ingest_csv, IngestReport};
pub use panel::collapse_periods;
