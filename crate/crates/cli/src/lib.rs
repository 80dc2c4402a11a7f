//! Configuration, orchestration and file output for `leafflow` runs.

pub mod config;
pub mod expr;
pub mod pipeline;
pub mod plot;
pub mod emit;
pub mod sweep;
