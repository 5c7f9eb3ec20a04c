//! Benchmark runner library behind the `transferbench` binary.

pub mod config;
pub mod ensembles;
pub mod experiments;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod selection;
pub mod verify;

pub use config::RunConfig;
pub use pipeline::{run, Artifacts, RunOutcome};
