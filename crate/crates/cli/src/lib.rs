//! Experiment runner: configuration, the `solve`, `metrics` and `sweep`
//! commands, and their CSV outputs.

pub mod config;
pub mod run;
pub mod sweep;

pub use config::{Net, RunConfig, SweepRequest};
