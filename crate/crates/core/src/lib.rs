//! Learning depth from optical flow with very sparse supervision.
//!
//! A global-local network reads two images and the flow between them,
//! compresses them into six global parameters, generates the filters of a
//! tiny fully-convolutional network from those parameters and applies it to
//! the flow. Everything it needs is in this crate: a reverse-mode
//! differentiation tape, a synthetic two-view renderer, classical linear
//! triangulation, the losses and metrics, training and the experiment
//! drivers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Small fixed-size matrix code reads better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod camera;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pfm;
pub mod probe;
pub mod raster;
pub mod runner;
pub mod scene;
pub mod tensor;
pub mod training;

pub use camera::{CameraIntrinsics, PoseSE3};
pub use error::{Error, Result};
pub use raster::Raster;
pub use tensor::{AdamConfig, AdamState, Gradients, Tape, Tensor, Var};
