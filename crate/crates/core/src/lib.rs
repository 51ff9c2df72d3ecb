//! Self-calibrated illumination (SCI) low-light enhancement: color-space
//! conversions, a small CNN core, training, evaluation and dataset handling.

pub mod color;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sci;
pub mod trainer;

pub use error::{Error, Result};
