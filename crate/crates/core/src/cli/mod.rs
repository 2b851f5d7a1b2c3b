//! Experiment runner: built-in systems, configuration parsing, report
//! emission and the runtime self-test.

pub mod builtin;
pub mod config;
pub mod runner;
pub mod selftest;

pub use builtin::BuiltinSystem;
pub use config::{parse_config, ExperimentConfig};
pub use runner::{run_experiment, RunOptions, RunOutcome};
pub use selftest::{run_selftest, SelftestOptions, SelftestReport};
