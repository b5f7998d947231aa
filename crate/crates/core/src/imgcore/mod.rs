//! Physical-coordinate rasters: images and masks, bilinear/nearest sampling,
//! pull-back warping, crop/pad preprocessing and intensity standardization.

mod image;
pub mod io;
mod preprocess;
mod sample;
mod standardize;
mod warp;

pub use self::image::{Image2D, Mask2D};
pub use preprocess::{crop_center, crop_center_mask, pad_to, pad_to_mask, resample, resample_mask};
pub use sample::{sample_bilinear, sample_bilinear_grad, sample_nearest};
pub use standardize::{standardize_intensity, HistogramStandard};
pub use warp::{soft_warp_mask, warp, warp_mask, Interp, Mapping};
