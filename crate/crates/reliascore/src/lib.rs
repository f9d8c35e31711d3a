//! Holistic reliability evaluation: split dumps and run manifests, the
//! evaluation pipeline, report formats, synthetic fixtures and the CLI.

pub mod cli;
mod error;
pub mod fixture;
pub mod formats;
pub mod pipeline;
pub mod plan;
pub mod store;

pub use error::{Error, Result};
pub use reliascore_core as core;
