use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::linalg::Lu;
use crate::scalar::Scalar;
use std::sync::Arc;

pub const TPS_GRID_SIDE: usize = 4;
pub const TPS_CONTROL_POINTS: usize = TPS_GRID_SIDE * TPS_GRID_SIDE;
/// x displacements of the 16 control points followed by the 16 y displacements.
pub const TPS_PARAMS: usize = 2 * TPS_CONTROL_POINTS;

const SYSTEM: usize = TPS_CONTROL_POINTS + 3;

/// Radial kernel `U(r) = r^2 ln(r^2)`, `U(0) = 0`, taking `r^2`.
#[inline]
fn kernel<T: Scalar>(r2: T) -> T {
    if r2 > T::zero() {
        r2 * r2.ln()
    } else {
        T::zero()
    }
}

/// Fixed control points and the factorized spline system.
///
/// The interpolant is linear in the control displacements `d`:
/// `u(p) = sum_k w_k(p) d_k`, and `w(p)` only depends on the control points, so
/// the inverse system is solved once and reused for every evaluation.
#[derive(Debug)]
pub struct TpsBasis<T> {
    control: Vec<Point<T>>,
    center: Point<T>,
    scale: T,
    // SYSTEM x 16, row-major: columns of the inverse system for unit displacements
    coef: Vec<T>,
}

impl<T: Scalar> PartialEq for TpsParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.theta == other.theta && self.alpha == other.alpha && self.basis == other.basis
    }
}

impl<T: Scalar> PartialEq for TpsBasis<T> {
    fn eq(&self, other: &Self) -> bool {
        self.control == other.control
    }
}

impl<T: Scalar> TpsBasis<T> {
    /// Builds the basis for 16 control points (coordinates normalized internally
    /// for conditioning; the interpolant is invariant to that scaling).
    pub fn new(control: Vec<Point<T>>) -> Result<Self> {
        if control.len() != TPS_CONTROL_POINTS {
            return Err(Error::InvalidTransform(format!(
                "expected {TPS_CONTROL_POINTS} control points, got {}",
                control.len()
            )));
        }
        if control.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("tps control points".into()));
        }
        let n = T::from_usize_lossy(control.len());
        let center = control.iter().fold(Point::zero(), |a, p| a + *p) * (T::one() / n);
        let scale = control.iter().fold(T::zero(), |m, p| m.max((*p - center).norm()));
        if !(scale > T::zero()) {
            return Err(Error::SingularTps);
        }
        let local: Vec<Point<T>> = control.iter().map(|p| (*p - center) * (T::one() / scale)).collect();

        let mut a = vec![T::zero(); SYSTEM * SYSTEM];
        for (r, pr) in local.iter().enumerate() {
            for (c, pc) in local.iter().enumerate() {
                let d = *pr - *pc;
                a[r * SYSTEM + c] = kernel(d.x * d.x + d.y * d.y);
            }
            let affine = [T::one(), pr.x, pr.y];
            for (k, v) in affine.iter().enumerate() {
                a[r * SYSTEM + TPS_CONTROL_POINTS + k] = *v;
                a[(TPS_CONTROL_POINTS + k) * SYSTEM + r] = *v;
            }
        }
        let lu = Lu::factor(a, SYSTEM, T::lit(1e-12).max(T::epsilon() * T::lit(16.0)))
            .ok_or(Error::SingularTps)?;
        let mut coef = vec![T::zero(); SYSTEM * TPS_CONTROL_POINTS];
        let mut rhs = vec![T::zero(); SYSTEM];
        for k in 0..TPS_CONTROL_POINTS {
            rhs.iter_mut().for_each(|v| *v = T::zero());
            rhs[k] = T::one();
            let col = lu.solve(&rhs);
            for r in 0..SYSTEM {
                coef[r * TPS_CONTROL_POINTS + k] = col[r];
            }
        }
        Ok(Self { control, center, scale, coef })
    }

    /// 4x4 control points spanning the grid's pixel-centre hull expanded by
    /// `margin` (fraction of the span) on every side.
    pub fn for_grid(grid: &Grid<T>, margin: T) -> Result<Self> {
        let lo = grid.origin;
        let hi = grid.point(grid.width - 1, grid.height - 1);
        Self::regular(lo, hi, margin)
    }

    pub fn regular(lo: Point<T>, hi: Point<T>, margin: T) -> Result<Self> {
        let span = hi - lo;
        let lo = lo - span * margin;
        let span = span * (T::one() + margin + margin);
        let steps = T::from_usize_lossy(TPS_GRID_SIDE - 1);
        let mut pts = Vec::with_capacity(TPS_CONTROL_POINTS);
        for j in 0..TPS_GRID_SIDE {
            for i in 0..TPS_GRID_SIDE {
                pts.push(Point::new(
                    lo.x + span.x * T::from_usize_lossy(i) / steps,
                    lo.y + span.y * T::from_usize_lossy(j) / steps,
                ));
            }
        }
        Self::new(pts)
    }

    pub fn control_points(&self) -> &[Point<T>] {
        &self.control
    }

    /// Interpolation weights `w_k(p)` of the 16 control displacements at `p`.
    pub fn weights(&self, p: Point<T>) -> [T; TPS_CONTROL_POINTS] {
        let inv = T::one() / self.scale;
        let q = (p - self.center) * inv;
        let mut row = [T::zero(); SYSTEM];
        for (j, c) in self.control.iter().enumerate() {
            let d = q - (*c - self.center) * inv;
            row[j] = kernel(d.x * d.x + d.y * d.y);
        }
        row[TPS_CONTROL_POINTS] = T::one();
        row[TPS_CONTROL_POINTS + 1] = q.x;
        row[TPS_CONTROL_POINTS + 2] = q.y;
        let mut w = [T::zero(); TPS_CONTROL_POINTS];
        for (r, rv) in row.iter().enumerate() {
            let base = r * TPS_CONTROL_POINTS;
            for (k, wk) in w.iter_mut().enumerate() {
                *wk += *rv * self.coef[base + k];
            }
        }
        w
    }

    /// Weights for every pixel centre of a grid, row-major.
    pub fn grid_weights(&self, grid: &Grid<T>) -> Vec<[T; TPS_CONTROL_POINTS]> {
        grid.points().into_iter().map(|p| self.weights(p)).collect()
    }
}

/// Thin-plate spline deformation `p -> p + u(p)` whose control displacements
/// are `alpha * theta` (x block then y block).
#[derive(Clone, Debug)]
pub struct TpsParams<T> {
    theta: Vec<T>,
    pub alpha: T,
    basis: Arc<TpsBasis<T>>,
}

impl<T: Scalar> TpsParams<T> {
    pub fn new(basis: Arc<TpsBasis<T>>, theta: Vec<T>, alpha: T) -> Result<Self> {
        if theta.len() != TPS_PARAMS {
            return Err(Error::InvalidTransform(format!(
                "tps expects {TPS_PARAMS} parameters, got {}",
                theta.len()
            )));
        }
        Ok(Self { theta, alpha, basis })
    }

    pub fn zero(basis: Arc<TpsBasis<T>>, alpha: T) -> Self {
        Self { theta: vec![T::zero(); TPS_PARAMS], alpha, basis }
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn basis(&self) -> &Arc<TpsBasis<T>> {
        &self.basis
    }

    /// Displacement of control point `k` in mm.
    pub fn control_displacement(&self, k: usize) -> Point<T> {
        Point::new(self.alpha * self.theta[k], self.alpha * self.theta[TPS_CONTROL_POINTS + k])
    }

    /// Displacement given precomputed weights at the evaluation point.
    #[inline]
    pub fn displacement_with(&self, w: &[T; TPS_CONTROL_POINTS]) -> Point<T> {
        let (tx, ty) = self.theta.split_at(TPS_CONTROL_POINTS);
        let mut u = Point::zero();
        for k in 0..TPS_CONTROL_POINTS {
            u.x += w[k] * tx[k];
            u.y += w[k] * ty[k];
        }
        u * self.alpha
    }

    pub fn displacement(&self, p: Point<T>) -> Point<T> {
        if self.theta.iter().all(|v| *v == T::zero()) {
            return Point::zero();
        }
        self.displacement_with(&self.basis.weights(p))
    }

    #[inline]
    pub fn apply(&self, p: Point<T>) -> Point<T> {
        p + self.displacement(p)
    }

    /// Inverse by fixed-point iteration `x <- q - u(x)`; converges when the
    /// displacement is a contraction (small deformations).
    pub fn apply_inverse(&self, q: Point<T>, tol: T, max_iter: usize) -> Option<Point<T>> {
        let mut x = q;
        for _ in 0..max_iter {
            let next = q - self.displacement(x);
            if next.dist(x) <= tol {
                return Some(next);
            }
            x = next;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis() -> Arc<TpsBasis<f64>> {
        Arc::new(TpsBasis::for_grid(&Grid::centered(64, 64, 1.5625).unwrap(), 0.1).unwrap())
    }

    #[test]
    fn zero_theta_is_identity() {
        let t = TpsParams::zero(basis(), 0.001);
        let p = Point::new(3.25, -17.0);
        assert_eq!(t.apply(p), p);
    }

    #[test]
    fn single_control_point_constraint() {
        let b = basis();
        for k in 0..TPS_CONTROL_POINTS {
            let mut theta = vec![0.0; TPS_PARAMS];
            theta[k] = 1000.0;
            let t = TpsParams::new(b.clone(), theta, 0.001).unwrap();
            for (j, c) in b.control_points().iter().enumerate() {
                let expect = if j == k { *c + Point::new(1.0, 0.0) } else { *c };
                assert!(t.apply(*c).dist(expect) < 1e-9, "k={k} j={j}");
            }
        }
    }

    #[test]
    fn uniform_displacement_is_global_translation() {
        let b = basis();
        let mut theta = vec![2000.0; TPS_CONTROL_POINTS];
        theta.extend(vec![-1000.0; TPS_CONTROL_POINTS]);
        let t = TpsParams::new(b, theta, 0.001).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = Point::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            assert!(t.apply(p).dist(p + Point::new(2.0, -1.0)) < 1e-9);
        }
    }

    #[test]
    fn wrong_parameter_count() {
        assert!(TpsParams::new(basis(), vec![0.0; 31], 0.001).is_err());
    }

    #[test]
    fn degenerate_control_grid_is_singular() {
        let pts = vec![Point::new(1.0, 1.0); TPS_CONTROL_POINTS];
        assert!(matches!(TpsBasis::new(pts), Err(Error::SingularTps)));
        // collinear points leave the affine block rank deficient
        let line: Vec<Point<f64>> = (0..TPS_CONTROL_POINTS).map(|k| Point::new(k as f64, 2.0 * k as f64)).collect();
        assert!(matches!(TpsBasis::new(line), Err(Error::SingularTps)));
    }

    #[test]
    fn fixed_point_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta: Vec<f64> = (0..TPS_PARAMS).map(|_| rng.random_range(-3000.0..3000.0)).collect();
        let t = TpsParams::new(basis(), theta, 0.001).unwrap();
        let p = Point::new(10.0, -20.0);
        let back = t.apply_inverse(t.apply(p), 1e-13, 200).unwrap();
        assert!(back.dist(p) < 1e-10);
    }
}
