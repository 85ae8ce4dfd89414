//! Scenario files, Monte Carlo evaluation and report output for
//! [`hcre_core`], plus the `hcre` command-line tool built on them.

pub mod config;
pub mod error;
pub mod harness;
pub mod output;
pub mod scenario;

pub use error::{HarnessError, Result};
pub use harness::{emit_report, monte_carlo, ExperimentConfig, McReport};
pub use scenario::{Preset, Scenario, VariantChoice, WeightChoice};
