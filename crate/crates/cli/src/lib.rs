//! Config-driven experiment pipeline over the `ticketlab` library: each stage
//! writes its artifacts atomically and records their digests in a run manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, PruneMethod};
pub use error::{CliError, Result};
pub use pipeline::{Experiment, Stage, StageStatus};
