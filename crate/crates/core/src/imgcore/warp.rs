use super::sample::{sample_bilinear, sample_nearest};
use super::{Image2D, Mask2D};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::scalar::Scalar;

/// A coordinate map from output (fixed) space into input (moving) space.
pub trait Mapping<T> {
    fn map_point(&self, p: Point<T>) -> Point<T>;
}

impl<T, F: Fn(Point<T>) -> Point<T>> Mapping<T> for F {
    fn map_point(&self, p: Point<T>) -> Point<T> {
        self(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Pull-back warp: output pixel `x` of `out_grid` receives `img(t(x))`.
pub fn warp<T: Scalar, M: Mapping<T> + ?Sized>(
    img: &Image2D<T>,
    t: &M,
    out_grid: &Grid<T>,
    mode: Interp,
) -> Image2D<T> {
    let mut data = Vec::with_capacity(out_grid.len());
    for j in 0..out_grid.height {
        for i in 0..out_grid.width {
            let p = t.map_point(out_grid.point(i, j));
            let v = match mode {
                Interp::Bilinear => sample_bilinear(img, p),
                Interp::Nearest => sample_nearest(img.grid(), p).map_or(T::zero(), |k| img.data()[k]),
            };
            data.push(v);
        }
    }
    Image2D::from_vec_unchecked(*out_grid, data)
}

/// Pull-back warp of a binary mask. Only nearest mode yields a binary result;
/// asking for bilinear is an error (use [`soft_warp_mask`] for fractional masks).
pub fn warp_mask<T: Scalar, M: Mapping<T> + ?Sized>(
    mask: &Mask2D<T>,
    t: &M,
    out_grid: &Grid<T>,
    mode: Interp,
) -> Result<Mask2D<T>> {
    if mode == Interp::Bilinear {
        return Err(Error::BilinearOnMask);
    }
    let mut data = Vec::with_capacity(out_grid.len());
    for j in 0..out_grid.height {
        for i in 0..out_grid.width {
            let p = t.map_point(out_grid.point(i, j));
            data.push(sample_nearest(mask.grid(), p).map_or(0, |k| mask.data()[k]));
        }
    }
    Mask2D::new(*out_grid, data)
}

/// Bilinear warp of a mask into a fractional (soft) image, as used by the
/// differentiable segmentation loss.
pub fn soft_warp_mask<T: Scalar, M: Mapping<T> + ?Sized>(
    mask: &Mask2D<T>,
    t: &M,
    out_grid: &Grid<T>,
) -> Image2D<T> {
    warp(&mask.to_image(), t, out_grid, Interp::Bilinear)
}
