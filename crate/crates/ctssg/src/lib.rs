//! Volumetric slice-sequence encoder with spectral graph convolutions.
//!
//! The crate models a stack of image slices as a path-like weighted graph
//! (one node per slice triplet, edge weights decaying with physical
//! distance), encodes each node with a small feature extractor, and mixes
//! nodes with Chebyshev polynomial filters of the scaled graph Laplacian.
//! Training, synthetic data generation, evaluation metrics, and the
//! experiment harness (ablations, robustness sweeps) are all included, and
//! every numerical component has an independent oracle used by the test
//! suite and the `oracle-check` command.

pub mod error;
pub mod scalar;
pub mod util;

pub mod tensor;

pub mod graph;
pub mod oracles;

pub mod encoder;
pub mod metrics;
pub mod optim;
pub mod synth;
pub mod train;

pub mod dataset;
pub mod experiment;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{GradStore, Tape, Tensor};
