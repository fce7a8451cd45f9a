//! Files, experiment pipelines and reporting around `orpose-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod image_io;
pub mod negatives;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod skeleton_io;

pub use error::{Error, Result};
