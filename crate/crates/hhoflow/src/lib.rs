//! File formats, configuration and output for the `hhoflow-core` solver.

pub mod config;
mod error;
pub mod fvca5;
pub mod mesh_io;
pub mod output;

pub use error::{Error, Result};
