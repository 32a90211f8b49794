//! Sweep orchestration, persistence and reporting for the `pcgap` tiers.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod plots;
pub mod records;
pub mod runner;
pub mod tasks;

pub use config::{Scale, SweepConfig, Tier};
pub use error::{HarnessError, Result};
pub use records::{SweepRecord, TaskStatus};
pub use runner::{report, run_sweep, RunOutcome};
pub use tasks::{enumerate_configs, run_task};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
