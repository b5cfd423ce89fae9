//! Objectness reranking of bottom-up object proposals with a small
//! convolutional network, plus the training and evaluation machinery around it.

pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod netdef;
pub mod par;
pub mod raster;
pub mod reference;
pub mod rerank;
pub mod roipool;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{iou, BBox};
