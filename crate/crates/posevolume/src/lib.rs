//! Synthetic two-view benchmark, file formats, batch evaluation and the
//! command-line driver for the posevolume pipeline.

#![warn(missing_docs)]

/// Error type.
pub mod error;
pub mod cli;
pub mod config;
pub mod eval;
pub mod experiments;
pub mod io;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
pub use posevolume_core as core;
