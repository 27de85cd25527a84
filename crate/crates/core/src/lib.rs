//! Low-precision, high-recall ensembles for binary image segmentation.
//!
//! Members are trained with recall-biased losses (Tversky or balanced
//! cross-entropy with `beta` near 1), each on its own random subset of the
//! data and from its own random initialization. Their probability maps are
//! averaged and thresholded high (0.9 by default), which keeps the
//! structures every member agrees on and drops the false positives that
//! members make in different places.

pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod rng;
pub mod segmenter;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{BinaryMask, Dims, GridFile, ImageGrid, ProbMap};

/// Toolkit version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
