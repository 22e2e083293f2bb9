//! Runner for coherent procedural mistake detection: model backends, the
//! self-dialog loop, datasets, tuning, reports and the command line.

pub mod backends;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod nli;
pub mod orchestrator;
pub mod report;
pub mod synth;

pub use pmd_core as core;

pub use error::{EngineError, EngineResult};
pub use orchestrator::{Engine, RunConfig};
