//! Embedding-preserving image distortion.
//!
//! A triplet-loss embedding network maps MNIST digits onto the unit
//! hypersphere. A U-Net distortion generator is then trained against the
//! frozen embedder so that distorted images drift far from their originals in
//! pixel space while their embeddings stay within a margin. The evaluation
//! module measures both effects and runs a mock authentication system that
//! stores only distorted templates.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod generator;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod report;

pub use error::{Error, Result};
pub use image::Image;
