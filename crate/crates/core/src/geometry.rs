//! Points and regular sampling grids in physical (mm) coordinates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// A point or vector in millimetres.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> Point<U> {
        Point::new(U::lit(self.x.to_f64_lossy()), U::lit(self.y.to_f64_lossy()))
    }

    pub fn to_array_f64(self) -> [f64; 2] {
        [self.x.to_f64_lossy(), self.y.to_f64_lossy()]
    }

    pub fn from_array_f64(a: [f64; 2]) -> Self {
        Self::new(T::lit(a[0]), T::lit(a[1]))
    }
}

impl<T: Scalar> Add for Point<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Point<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Point<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

/// Regular isotropic pixel grid. Pixel `(i, j)` (column, row) has its centre at
/// `origin + spacing * (i, j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub spacing: T,
    pub origin: Point<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(width: usize, height: usize, spacing: T, origin: Point<T>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidGrid(format!("{width}x{height} is smaller than 2x2")));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self { width, height, spacing, origin })
    }

    /// Grid of `width x height` pixels whose pixel-centre hull is centred on (0, 0) mm.
    pub fn centered(width: usize, height: usize, spacing: T) -> Result<Self> {
        let half = T::lit(0.5);
        let origin = Point::new(
            -T::from_usize_lossy(width - 1) * spacing * half,
            -T::from_usize_lossy(height - 1) * spacing * half,
        );
        Self::new(width, height, spacing, origin)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical extent (pixel count times spacing) along x and y.
    pub fn extent(&self) -> (T, T) {
        (
            T::from_usize_lossy(self.width) * self.spacing,
            T::from_usize_lossy(self.height) * self.spacing,
        )
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> Point<T> {
        Point::new(
            self.origin.x + self.spacing * T::from_usize_lossy(i),
            self.origin.y + self.spacing * T::from_usize_lossy(j),
        )
    }

    /// Continuous (column, row) index of a physical point.
    #[inline]
    pub fn to_index(&self, p: Point<T>) -> (T, T) {
        ((p.x - self.origin.x) / self.spacing, (p.y - self.origin.y) / self.spacing)
    }

    /// Pixel centres in row-major order.
    pub fn points(&self) -> Vec<Point<T>> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.height {
            for i in 0..self.width {
                out.push(self.point(i, j));
            }
        }
        out
    }

    /// Same geometry up to a relative tolerance on spacing/origin.
    pub fn compatible(&self, other: &Self) -> bool {
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) * self.spacing;
        self.width == other.width
            && self.height == other.height
            && (self.spacing - other.spacing).abs() <= tol
            && (self.origin.x - other.origin.x).abs() <= tol
            && (self.origin.y - other.origin.y).abs() <= tol
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            spacing: U::lit(self.spacing.to_f64_lossy()),
            origin: self.origin.cast(),
        }
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            width: self.width,
            height: self.height,
            spacing_mm: self.spacing.to_f64_lossy(),
            origin_mm: self.origin.to_array_f64(),
        }
    }
}

/// Serializable grid description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub spacing_mm: f64,
    pub origin_mm: [f64; 2],
}

impl GridSpec {
    pub fn grid<T: Scalar>(&self) -> Result<Grid<T>> {
        Grid::new(
            self.width,
            self.height,
            T::lit(self.spacing_mm),
            Point::from_array_f64(self.origin_mm),
        )
    }
}
