//! Nonparametric scene parsing by sampling and filtering.
//!
//! Training images are ranked against a query by global descriptors, labeled
//! superpixels are drawn with a class-balanced weighted sample, their labels are
//! carried over to the query superpixels by two-kernel Gaussian filtering on a
//! permutohedral lattice, and a dense pixelwise CRF refines the result.

pub mod bench;
pub mod config;
pub mod crf;
pub mod dataset;
pub mod descriptors;
pub mod eval;
pub mod error;
pub mod features;
pub mod image;
pub mod lattice;
pub mod oracle;
pub mod palette;
pub mod pipeline;
pub mod sampler;
pub mod superpixel;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
