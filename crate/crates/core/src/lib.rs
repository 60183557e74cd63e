//! Vehicle re-identification over precomputed convolutional feature maps.
//!
//! The pipeline localizes vehicle parts with unsupervised semantic prototypes,
//! fuses the features of the discriminative parts, tags each image as a front
//! or back view, learns to generate the feature of the unseen orthogonal view,
//! and ranks a gallery with a combined distance.

// Range checks are written as `!(x >= 0.0)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clustering;
pub mod dra;
pub mod error;
pub mod nn;
pub mod ovg;
pub mod par;
pub mod prototype;
pub mod retrieval;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, ErrorKind, Result};
