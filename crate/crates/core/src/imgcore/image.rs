use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::scalar::Scalar;

/// Scalar raster on a physical grid with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D<T> {
    grid: Grid<T>,
    data: Vec<T>,
}

impl<T: Scalar> Image2D<T> {
    pub fn new(grid: Grid<T>, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidImage(format!(
                "{} samples for a {}x{} grid",
                data.len(),
                grid.width,
                grid.height
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < T::zero() || **v > T::one()) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self { grid, data })
    }

    /// Caller guarantees the `[0, 1]` range (convex combinations of valid samples).
    pub(crate) fn from_vec_unchecked(grid: Grid<T>, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn filled(grid: Grid<T>, value: T) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn from_fn(grid: Grid<T>, mut f: impl FnMut(usize, usize, Point<T>) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.height {
            for i in 0..grid.width {
                data.push(f(i, j, grid.point(i, j)));
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[self.grid.index(i, j)]
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    /// Mean absolute difference against an image on the same grid.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<T> {
        if !self.grid.compatible(&other.grid) {
            return Err(Error::GridMismatch("mean_abs_diff".into()));
        }
        let s: T = self.data.iter().zip(&other.data).map(|(a, b)| (*a - *b).abs()).sum();
        Ok(s / T::from_usize_lossy(self.data.len()))
    }

    pub fn cast<U: Scalar>(&self) -> Image2D<U> {
        Image2D {
            grid: self.grid.cast(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy()).max(U::zero()).min(U::one())).collect(),
        }
    }
}

/// Binary raster (values exactly 0 or 1) on a physical grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask2D<T> {
    grid: Grid<T>,
    data: Vec<u8>,
}

impl<T: Scalar> Mask2D<T> {
    pub fn new(grid: Grid<T>, data: Vec<u8>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidImage(format!(
                "{} mask samples for a {}x{} grid",
                data.len(),
                grid.width,
                grid.height
            )));
        }
        if data.iter().any(|v| *v > 1) {
            return Err(Error::InvalidImage("mask values must be 0 or 1".into()));
        }
        Ok(Self { grid, data })
    }

    pub fn empty(grid: Grid<T>) -> Self {
        Self { grid, data: vec![0; grid.len()] }
    }

    pub fn from_fn(grid: Grid<T>, mut f: impl FnMut(usize, usize, Point<T>) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.height {
            for i in 0..grid.width {
                data.push(u8::from(f(i, j, grid.point(i, j))));
            }
        }
        Self { grid, data }
    }

    /// Hard mask from an image: 1 where the intensity is at least `threshold`.
    pub fn threshold(img: &Image2D<T>, threshold: T) -> Self {
        Self {
            grid: *img.grid(),
            data: img.data().iter().map(|v| u8::from(*v >= threshold)).collect(),
        }
    }

    /// Declares this mask as the companion of `img`; fails unless the grids agree.
    pub fn check_companion(&self, img: &Image2D<T>) -> Result<()> {
        if self.grid.compatible(img.grid()) {
            Ok(())
        } else {
            Err(Error::GridMismatch("mask is not on its companion image grid".into()))
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[self.grid.index(i, j)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// The mask as a 0/1 intensity image.
    pub fn to_image(&self) -> Image2D<T> {
        Image2D::from_vec_unchecked(
            self.grid,
            self.data.iter().map(|v| if *v != 0 { T::one() } else { T::zero() }).collect(),
        )
    }

    /// Physical centroid of the foreground, `None` when empty.
    pub fn centroid(&self) -> Option<Point<T>> {
        let mut acc = Point::zero();
        let mut n = 0usize;
        for j in 0..self.grid.height {
            for i in 0..self.grid.width {
                if self.get(i, j) {
                    acc = acc + self.grid.point(i, j);
                    n += 1;
                }
            }
        }
        (n > 0).then(|| acc * (T::one() / T::from_usize_lossy(n)))
    }

    pub fn cast<U: Scalar>(&self) -> Mask2D<U> {
        Mask2D { grid: self.grid.cast(), data: self.data.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid<f64> {
        Grid::new(4, 3, 1.0, Point::zero()).unwrap()
    }

    #[test]
    fn image_rejects_out_of_range_values() {
        assert!(Image2D::new(grid(), vec![0.5; 12]).is_ok());
        assert!(Image2D::new(grid(), vec![1.5; 12]).is_err());
        assert!(Image2D::new(grid(), vec![f64::NAN; 12]).is_err());
        assert!(Image2D::new(grid(), vec![0.5; 11]).is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(Mask2D::new(grid(), vec![1; 12]).is_ok());
        assert!(Mask2D::new(grid(), vec![2; 12]).is_err());
    }

    #[test]
    fn companion_grid_check() {
        let img = Image2D::filled(grid(), 0.0).unwrap();
        let m = Mask2D::empty(grid());
        assert!(m.check_companion(&img).is_ok());
        let other = Mask2D::empty(Grid::new(4, 3, 2.0, Point::zero()).unwrap());
        assert!(other.check_companion(&img).is_err());
    }
}
