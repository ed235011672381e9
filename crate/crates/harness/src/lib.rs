//! Experiment harness for two-stage matching-market off-policy evaluation.
//!
//! Wraps `matchope_core` with declarative configuration, replicated
//! estimator sweeps, off-policy learning runs, the analytic verification
//! suite, JSONL ingestion and report export. The `matchope` binary exposes
//! all of it on the command line.

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod opl_experiment;
pub mod plots;
pub mod report;
pub mod sweep;
pub mod verify;

pub use error::{HarnessError, Result};
