//! Pipeline stages behind the `forecaster` binary, exposed for tests.

pub mod commands;
pub mod config;
pub mod svg;
