//! Point-annotated benthic image classification: image grids, colour
//! enhancement, hybrid multi-size patches, texture feature maps, a small
//! convolutional network and evaluation metrics.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cnn;
pub mod dataset;
pub mod eval;
pub mod exec;
pub mod features;
pub mod grid;
pub mod io;
pub mod preprocess;

pub use exec::Exec;
pub use grid::ImageGrid;
