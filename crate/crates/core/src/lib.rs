//! Core algorithms for occlusion-resilient 2D pose adaptation.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! skeleton geometry, heatmap rendering and decoding, the PCK metric, a
//! small convolutional heatmap regressor with hand-written backward passes,
//! the learned anatomical prior, synthetic scene generation, and the
//! mean-teacher adaptation loop. File formats, checkpoints and the command
//! line live in the `orpose` crate.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled; `std` only turns on runtime SIMD detection for the matrix
//! kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adapt;
pub mod augment;
pub mod bones;
pub mod error;
pub mod heatmap;
pub mod losses;
pub(crate) mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pose;
pub mod prior;
pub mod real;
pub mod rng;
pub mod skeleton;
pub mod softargmax;
pub mod synth;
pub mod train;
pub mod vonmises;

pub use bones::{bone_vectors, BoneVectorSet};
pub use error::{Error, Result};
pub use heatmap::{decode_heatmap, render_heatmap, Grid, Heatmap};
pub use metrics::{pck, PckResult};
pub use pose::Pose;
pub use real::Real;
pub use skeleton::SkeletonSpec;

