//! Data-pipeline toolkit for large, heterogeneous satellite-imagery datasets.
//!
//! The crate covers the path from raw imagery to training-ready inputs:
//!
//! - [`dataset`]: validated sidecar ingest and summary statistics
//! - [`geometry`]: context-window expansion and cropping
//! - [`transforms`]: deterministic raster transforms (rotate, flip, zoom, noise, blur, rescale)
//! - [`augment`]: offline image and metadata augmentation plus false-detection crops
//! - [`sampler`]: entropy-weighted, class-balanced batch sampling with a coverage guarantee
//! - [`staging`]: staged streaming I/O and a storage-latency simulator
//! - [`bench`]: transform benchmark harness with pluggable backends
//! - [`pipeline`]: the composed preprocessing pipeline and its configuration

pub mod augment;
pub mod bench;
pub mod dataset;
mod error;
pub mod geometry;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod sampler;
pub mod staging;
pub mod transforms;

pub use error::{Error, Result};
pub use raster::RasterImage;
