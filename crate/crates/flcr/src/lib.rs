//! Std companion to `flcr-core`: long-format CSV input, JSON documents with
//! exact float round trips, a rayon-backed pipeline runner, the simulation
//! experiment harness and the `flcr` command line.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod json;
pub mod parallel;
pub mod report;

pub use error::{Error, Result};
