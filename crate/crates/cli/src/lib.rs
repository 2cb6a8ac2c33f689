//! Command-line harness: synthetic data generation, fold-wise training of
//! the fused model and its baselines, evaluation and prediction export.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or inconsistent files, missing checkpoints), 3 numeric
//! failure (non-finite values during training or inference).

pub mod commands;
pub mod error;
pub mod experiment;

pub use commands::{run, Cli};
pub use error::CliError;
