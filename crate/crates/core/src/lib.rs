//! Sparse-view Gaussian splatting with multi-view geometric regularization.

pub mod appearance;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod georeg;
pub mod harness;
pub mod metrics;
pub mod raster;
pub mod renderer;
pub mod rng;
pub mod trainer;
pub mod warp;

pub use error::{Error, Result};
