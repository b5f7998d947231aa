use super::warp::{warp, warp_mask, Interp};
use super::{Image2D, Mask2D};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::scalar::Scalar;

fn pixels_for<T: Scalar>(size_mm: T, spacing: T) -> usize {
    (size_mm / spacing).round().to_usize().unwrap_or(0)
}

fn crop_raw<T: Scalar, V: Copy>(grid: &Grid<T>, data: &[V], size_mm: T) -> Result<(Grid<T>, Vec<V>)> {
    let (ex, ey) = grid.extent();
    let w = pixels_for(size_mm, grid.spacing);
    if !(size_mm > T::zero()) || w < 2 {
        return Err(Error::InvalidGrid(format!("crop size {size_mm} mm")));
    }
    if w > grid.width || w > grid.height {
        return Err(Error::CropTooLarge {
            window_mm: size_mm.to_f64_lossy(),
            extent_mm: ex.min(ey).to_f64_lossy(),
        });
    }
    let (ox, oy) = ((grid.width - w) / 2, (grid.height - w) / 2);
    let origin = Point::new(
        grid.origin.x + grid.spacing * T::from_usize_lossy(ox),
        grid.origin.y + grid.spacing * T::from_usize_lossy(oy),
    );
    let out_grid = Grid::new(w, w, grid.spacing, origin)?;
    let mut out = Vec::with_capacity(w * w);
    for j in 0..w {
        let row = grid.index(ox, oy + j);
        out.extend_from_slice(&data[row..row + w]);
    }
    Ok((out_grid, out))
}

fn pad_raw<T: Scalar, V: Copy>(grid: &Grid<T>, data: &[V], size_mm: T, fill: V) -> Result<(Grid<T>, Vec<V>)> {
    let w = pixels_for(size_mm, grid.spacing);
    if w < grid.width || w < grid.height {
        let (ex, ey) = grid.extent();
        return Err(Error::PadTooSmall {
            size_mm: size_mm.to_f64_lossy(),
            extent_mm: ex.max(ey).to_f64_lossy(),
        });
    }
    let (lx, ly) = ((w - grid.width) / 2, (w - grid.height) / 2);
    let origin = Point::new(
        grid.origin.x - grid.spacing * T::from_usize_lossy(lx),
        grid.origin.y - grid.spacing * T::from_usize_lossy(ly),
    );
    let out_grid = Grid::new(w, w, grid.spacing, origin)?;
    let mut out = vec![fill; w * w];
    for j in 0..grid.height {
        let src = grid.index(0, j);
        let dst = out_grid.index(lx, ly + j);
        out[dst..dst + grid.width].copy_from_slice(&data[src..src + grid.width]);
    }
    Ok((out_grid, out))
}

/// Central `size_mm x size_mm` window; retained pixels keep their physical coordinates.
pub fn crop_center<T: Scalar>(img: &Image2D<T>, size_mm: T) -> Result<Image2D<T>> {
    let (g, d) = crop_raw(img.grid(), img.data(), size_mm)?;
    Ok(Image2D::from_vec_unchecked(g, d))
}

pub fn crop_center_mask<T: Scalar>(mask: &Mask2D<T>, size_mm: T) -> Result<Mask2D<T>> {
    let (g, d) = crop_raw(mask.grid(), mask.data(), size_mm)?;
    Mask2D::new(g, d)
}

/// Centres the image on a `size_mm x size_mm` canvas filled with `fill`.
pub fn pad_to<T: Scalar>(img: &Image2D<T>, size_mm: T, fill: T) -> Result<Image2D<T>> {
    if !(fill >= T::zero() && fill <= T::one()) {
        return Err(Error::InvalidImage(format!("fill {fill} outside [0,1]")));
    }
    let (g, d) = pad_raw(img.grid(), img.data(), size_mm, fill)?;
    Ok(Image2D::from_vec_unchecked(g, d))
}

pub fn pad_to_mask<T: Scalar>(mask: &Mask2D<T>, size_mm: T) -> Result<Mask2D<T>> {
    let (g, d) = pad_raw(mask.grid(), mask.data(), size_mm, 0u8)?;
    Mask2D::new(g, d)
}

/// Resamples onto another grid with the identity map (bilinear).
pub fn resample<T: Scalar>(img: &Image2D<T>, grid: &Grid<T>) -> Image2D<T> {
    if img.grid().compatible(grid) {
        return img.clone();
    }
    warp(img, &|p: Point<T>| p, grid, Interp::Bilinear)
}

/// Resamples a mask onto another grid with the identity map (nearest).
pub fn resample_mask<T: Scalar>(mask: &Mask2D<T>, grid: &Grid<T>) -> Mask2D<T> {
    if mask.grid().compatible(grid) {
        return mask.clone();
    }
    warp_mask(mask, &|p: Point<T>| p, grid, Interp::Nearest).expect("nearest warp of a mask")
}
