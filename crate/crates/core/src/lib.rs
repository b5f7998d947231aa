//! Weakly supervised multimodal 2D image registration.
//!
//! The engine predicts an affine transform followed by a 4x4 thin-plate
//! spline refinement between a fixed and a moving image. Training uses
//! organ segmentations and synthetic mono-modal pairs; at inference only the
//! two images are needed.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which is what the trainer and the CLI use.

pub mod error;
pub mod geometry;
pub mod imgcore;
pub mod loss;
pub mod metrics;
pub mod net;
mod linalg;
pub mod scalar;
pub mod synthdata;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
pub use geometry::{Grid, GridSpec, Point};
pub use scalar::Scalar;

pub type Image = imgcore::Image2D<f64>;
pub type Mask = imgcore::Mask2D<f64>;
pub type Transform = transform::Transform2D<f64>;
pub type Image32 = imgcore::Image2D<f32>;
pub type Transform32 = transform::Transform2D<f32>;
