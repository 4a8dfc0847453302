//! The `hsisr` pipeline: unmix a low-resolution cube, synthesise a
//! dead-leaves training corpus, score the bicubic baseline and reconstruct
//! super-resolved cubes from externally produced abundances.
//!
//! Every command works inside one work directory and exchanges tensors as
//! NPY files, so the learned super-resolver can live in another process.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::Pipeline;
pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
