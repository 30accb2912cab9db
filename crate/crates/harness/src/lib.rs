//! Experiment orchestration: gap experiments, NS / NSO / score-function
//! runs, and their CSV, JSONL, SVG and PGM artifacts.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod selftest;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{build_gap_experiment, run, GapExperiment, Method, RunOutput};
