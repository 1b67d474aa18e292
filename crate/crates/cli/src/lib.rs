pub mod ablate;
pub mod commands;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod toyset;
pub mod train;

/// A diverged loss or non-finite gradient; the CLI exits with code 2.
#[derive(Debug, thiserror::Error)]
#[error("numerical failure: {0}")]
pub struct NumericalFailure(pub String);
