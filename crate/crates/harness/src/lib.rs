//! Experiment harness for the `dmliv` estimators: layered configuration,
//! seeded crash-resumable sweeps, report summaries and diagnostics.

#![deny(unsafe_code)]

pub mod config;
pub mod diagnose;
pub mod error;
pub mod report;
pub mod run;
pub mod summary;

pub use config::{load, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use report::{ReportRow, RowStatus};
pub use run::{run_cell, run_experiment, run_experiment_in, Cell, ExperimentReport};
pub use summary::{plot_data, summarize, Summary};
