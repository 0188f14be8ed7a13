//! Learn spatially varying, semantics-aware photo adjustment styles from
//! exemplar image pairs.
//!
//! A feedforward network maps a per-superpixel feature vector (pixelwise,
//! contextual and global descriptors) to a 3x10 quadratic color transform,
//! which is applied to every pixel of the superpixel through that pixel's own
//! color basis vector.

pub mod colorspace;
pub mod error;
pub mod features;
pub mod io;
pub mod network;
pub mod pipeline;
pub mod segmentation;
pub mod selection;
pub mod sampling;
pub mod semantics;

pub use error::{Error, Result};
