use super::Transform2D;
use crate::geometry::{Grid, Point};
use crate::scalar::Scalar;

/// `u(x) = t(x) - x` sampled at the pixel centres of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField<T> {
    pub grid: Grid<T>,
    pub u: Vec<Point<T>>,
}

impl<T: Scalar> DisplacementField<T> {
    pub fn zeros(grid: Grid<T>) -> Self {
        Self { grid, u: vec![Point::zero(); grid.len()] }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|p| p.is_finite())
    }

    pub fn max_norm(&self) -> T {
        self.u.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }

    /// Number of samples where the Jacobian determinant of `x + u(x)` is not
    /// positive (local folding), from central differences.
    pub fn folded_samples(&self) -> usize {
        let g = &self.grid;
        let at = |i: usize, j: usize| self.u[g.index(i, j)];
        let diff = |a: Point<T>, b: Point<T>, h: T| (a - b) * (T::one() / h);
        let mut n = 0;
        for j in 0..g.height {
            for i in 0..g.width {
                let (il, ir) = (i.saturating_sub(1), (i + 1).min(g.width - 1));
                let (jl, jr) = (j.saturating_sub(1), (j + 1).min(g.height - 1));
                let dx = diff(at(ir, j), at(il, j), g.spacing * T::from_usize_lossy(ir - il));
                let dy = diff(at(i, jr), at(i, jl), g.spacing * T::from_usize_lossy(jr - jl));
                let det = (T::one() + dx.x) * (T::one() + dy.y) - dy.x * dx.y;
                if !(det > T::zero()) {
                    n += 1;
                }
            }
        }
        n
    }
}

pub fn displacement_field<T: Scalar>(t: &Transform2D<T>, grid: &Grid<T>) -> DisplacementField<T> {
    let u = grid.points().into_iter().map(|p| t.apply(p) - p).collect();
    DisplacementField { grid: *grid, u }
}
