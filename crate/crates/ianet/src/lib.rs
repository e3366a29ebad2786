//! Inverted-attention training for a desk-scale detector/classifier.
//!
//! The crate is self-contained: a float64 tensor type with a reverse-mode
//! autodiff tape, the convolution/pooling/ROI/linear/loss operators a small
//! Fast-RCNN-style network needs, the inverted-attention mask generator,
//! a synthetic shapes dataset, and the training/evaluation loop behind the
//! `ianet` CLI.

pub mod attention;
pub mod boxes;
pub mod checkpoint;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod heatmap;
pub mod ops;
pub mod optim;
pub mod ppm;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
