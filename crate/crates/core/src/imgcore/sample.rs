use super::Image2D;
use crate::geometry::Point;
use crate::scalar::Scalar;

/// Snaps a continuous index to the nearest integer when it is within rounding
/// noise of it, so that sampling at pixel centres is exact.
#[inline]
fn snap<T: Scalar>(f: T) -> T {
    let r = f.round();
    let tol = T::epsilon() * T::lit(64.0) * f.abs().max(T::one());
    if (f - r).abs() <= tol {
        r
    } else {
        f
    }
}

/// Locates the bilinear cell containing continuous index `f` on an axis of `n`
/// samples, or `None` outside the pixel-centre hull `[0, n-1]`.
#[inline]
fn cell<T: Scalar>(f: T, n: usize) -> Option<(usize, T)> {
    let f = snap(f);
    let last = T::from_usize_lossy(n - 1);
    if !(f >= T::zero() && f <= last) {
        return None;
    }
    let mut i0 = f.floor().to_usize().unwrap_or(0);
    if i0 >= n - 1 {
        i0 = n - 2;
    }
    Some((i0, f - T::from_usize_lossy(i0)))
}

/// Bilinear interpolation at a physical point; 0 outside the pixel-centre hull.
pub fn sample_bilinear<T: Scalar>(img: &Image2D<T>, p: Point<T>) -> T {
    sample_bilinear_grad(img, p).0
}

/// Bilinear sample and its spatial gradient (per mm) at a physical point.
/// Outside the hull both are zero.
pub fn sample_bilinear_grad<T: Scalar>(img: &Image2D<T>, p: Point<T>) -> (T, Point<T>) {
    let g = img.grid();
    let (fx, fy) = g.to_index(p);
    let (Some((i0, tx)), Some((j0, ty))) = (cell(fx, g.width), cell(fy, g.height)) else {
        return (T::zero(), Point::zero());
    };
    let d = img.data();
    let k = g.index(i0, j0);
    let (v00, v10, v01, v11) = (d[k], d[k + 1], d[k + g.width], d[k + g.width + 1]);
    let one = T::one();
    let top = (one - tx) * v00 + tx * v10;
    let bot = (one - tx) * v01 + tx * v11;
    let value = (one - ty) * top + ty * bot;
    let mut dfx = (one - ty) * (v10 - v00) + ty * (v11 - v01);
    let mut dfy = bot - top;
    // on an interior node line the slope is the mean of both adjacent cells
    let half = T::lit(0.5);
    if tx == T::zero() && i0 > 0 {
        let left = (one - ty) * (v00 - d[k - 1]) + ty * (v01 - d[k + g.width - 1]);
        dfx = half * (dfx + left);
    }
    if ty == T::zero() && j0 > 0 {
        let up = (one - tx) * (v00 - d[k - g.width]) + tx * (v10 - d[k - g.width + 1]);
        dfy = half * (dfy + up);
    }
    (value, Point::new(dfx / g.spacing, dfy / g.spacing))
}

/// Nearest-pixel lookup; `None` outside the pixel-centre hull.
pub fn sample_nearest<T: Scalar>(grid: &crate::geometry::Grid<T>, p: Point<T>) -> Option<usize> {
    let (fx, fy) = grid.to_index(p);
    let (fx, fy) = (snap(fx), snap(fy));
    let half = T::lit(0.5);
    let lastx = T::from_usize_lossy(grid.width - 1);
    let lasty = T::from_usize_lossy(grid.height - 1);
    if !(fx >= T::zero() && fx <= lastx && fy >= T::zero() && fy <= lasty) {
        return None;
    }
    // round-half-up keeps the choice deterministic on ties
    let i = (fx + half).floor().to_usize()?.min(grid.width - 1);
    let j = (fy + half).floor().to_usize()?.min(grid.height - 1);
    Some(grid.index(i, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;

    #[test]
    fn constant_image_samples_constant() {
        let g = Grid::<f64>::new(5, 4, 0.7, Point::new(-1.0, 3.0)).unwrap();
        let img = Image2D::filled(g, 0.375).unwrap();
        for &(x, y) in &[(-1.0, 3.0), (0.33, 4.1), (1.8, 5.1), (-0.5, 3.9)] {
            assert!((sample_bilinear(&img, Point::new(x, y)) - 0.375).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_at_pixel_centres() {
        let g = Grid::new(8, 7, 0.3, Point::new(-49.2, 12.7)).unwrap();
        let img = Image2D::from_fn(g, |i, j, _| ((i * 7 + j * 13) % 17) as f64 / 16.0).unwrap();
        let p = g.point(3, 5);
        assert_eq!(sample_bilinear(&img, p), img.data()[5 * 8 + 3]);
        for j in 0..g.height {
            for i in 0..g.width {
                assert_eq!(sample_bilinear(&img, g.point(i, j)), img.get(i, j));
            }
        }
    }

    #[test]
    fn midpoint_of_two_by_two() {
        let g = Grid::new(2, 2, 1.0, Point::zero()).unwrap();
        let img = Image2D::new(g, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        // hand evaluation: 0.5*(0.5*0 + 0.5*1) + 0.5*(0.5*0 + 0.5*1)
        assert_eq!(sample_bilinear(&img, Point::new(0.5, 0.5)), 0.5);
    }

    #[test]
    fn outside_hull_is_zero() {
        let g = Grid::new(3, 3, 1.0, Point::zero()).unwrap();
        let img = Image2D::filled(g, 1.0).unwrap();
        assert_eq!(sample_bilinear(&img, Point::new(-0.01, 1.0)), 0.0);
        assert_eq!(sample_bilinear(&img, Point::new(1.0, 2.01)), 0.0);
        assert_eq!(sample_bilinear(&img, Point::new(2.0, 2.0)), 1.0);
        assert!(sample_nearest(&g, Point::new(2.4, 0.0)).is_none());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = Grid::new(6, 6, 0.5, Point::new(1.0, -2.0)).unwrap();
        let img = Image2D::from_fn(g, |i, j, _| ((i * i + 3 * j) % 11) as f64 / 10.0).unwrap();
        let p = Point::new(2.13, -0.71);
        let (_, grad) = sample_bilinear_grad(&img, p);
        let h = 1e-6;
        let fx = (sample_bilinear(&img, Point::new(p.x + h, p.y)) - sample_bilinear(&img, Point::new(p.x - h, p.y))) / (2.0 * h);
        let fy = (sample_bilinear(&img, Point::new(p.x, p.y + h)) - sample_bilinear(&img, Point::new(p.x, p.y - h))) / (2.0 * h);
        assert!((grad.x - fx).abs() < 1e-8);
        assert!((grad.y - fy).abs() < 1e-8);
    }

    #[test]
    fn node_gradient_is_central_difference() {
        let g = Grid::<f64>::centered(6, 5, 0.5).unwrap();
        let img = Image2D::from_fn(g, |i, j, _| ((i * i * 3 + j * 5) % 13) as f64 / 12.0).unwrap();
        let (i, j) = (2, 3);
        let (_, grad) = sample_bilinear_grad(&img, g.point(i, j));
        let cx = (img.get(i + 1, j) - img.get(i - 1, j)) / (2.0 * 0.5);
        let cy = (img.get(i, j + 1) - img.get(i, j - 1)) / (2.0 * 0.5);
        assert!((grad.x - cx).abs() < 1e-14 && (grad.y - cy).abs() < 1e-14);
    }
}
