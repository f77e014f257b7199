//! Geometry, rendering, loss and evaluation core for feed-forward semantic
//! 3D reconstruction with Gaussian splatting.

pub mod cli;
pub mod error;
pub mod field;
pub mod fusion;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod raster;
pub mod recovery;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
