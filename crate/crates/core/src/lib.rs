//! Unsupervised network intrusion detection from principal components.
//!
//! A PCA model of clean training traffic is monitored for batches whose
//! component standard deviations leave their bootstrap range; the rows of
//! such a batch are then scored on the disturbed components only.

pub mod artifact;
pub mod cli;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod matrix;
pub mod pca;
pub mod simulation;
pub mod stats;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use matrix::DataMatrix;
