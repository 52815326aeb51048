//! Standard-library companion to `entd-core`: COO tensor files, checkpoints,
//! logged training, evaluation and the `entd` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod coo;
pub mod error;
pub mod run;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
