//! Experiment harness: configuration, prompt corpus, seed-paired run
//! execution, persisted run records, and the analysis families behind the
//! CLI subcommands.

pub mod analysis;
pub mod config;
pub mod error;
pub mod families;
pub mod prompts;
pub mod records;
pub mod runner;
pub mod svg;
pub mod tables;

pub use error::{HarnessError, Result};
