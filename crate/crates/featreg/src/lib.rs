//! File formats, synthetic data and the command-line driver for `featreg-core`.

pub mod cli;
pub mod error;
pub mod fvb;
pub mod manifest;
pub mod montage;
pub mod nifti;
pub mod synth;

pub use error::{FormatError, Result};
