//! Filesystem, parallelism and command-line layer over `crackfpn-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod io;
pub mod manifest;
pub mod predict;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
