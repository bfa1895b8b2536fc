//! Library side of the `bandboost` binary: experiment configuration,
//! the six-experiment runner, and report emission. Split out so
//! integration tests can drive experiments in-process.

pub mod config;
pub mod experiment;
pub mod report;
