use crate::geometry::Point;
use crate::scalar::Scalar;

/// Affine map with alpha-scaled offsets from the identity:
///
/// ```text
/// x' = (1 + a*t0) x + a*t1 y + a*t2
/// y' = a*t3 x + (1 + a*t4) y + a*t5
/// ```
///
/// so `theta = 0` is exactly the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams<T> {
    pub theta: [T; 6],
    pub alpha: T,
}

impl<T: Scalar> AffineParams<T> {
    pub fn new(theta: [T; 6], alpha: T) -> Self {
        Self { theta, alpha }
    }

    pub fn identity(alpha: T) -> Self {
        Self { theta: [T::zero(); 6], alpha }
    }

    /// Parameters reproducing matrix `m` and translation `t`.
    pub fn from_matrix(m: [[T; 2]; 2], t: Point<T>, alpha: T) -> Self {
        let one = T::one();
        Self {
            theta: [
                (m[0][0] - one) / alpha,
                m[0][1] / alpha,
                t.x / alpha,
                m[1][0] / alpha,
                (m[1][1] - one) / alpha,
                t.y / alpha,
            ],
            alpha,
        }
    }

    pub fn matrix(&self) -> [[T; 2]; 2] {
        let (a, t) = (self.alpha, &self.theta);
        [[T::one() + a * t[0], a * t[1]], [a * t[3], T::one() + a * t[4]]]
    }

    pub fn translation(&self) -> Point<T> {
        Point::new(self.alpha * self.theta[2], self.alpha * self.theta[5])
    }

    pub fn det(&self) -> T {
        let m = self.matrix();
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    #[inline]
    pub fn apply(&self, p: Point<T>) -> Point<T> {
        let m = self.matrix();
        let t = self.translation();
        Point::new(m[0][0] * p.x + m[0][1] * p.y + t.x, m[1][0] * p.x + m[1][1] * p.y + t.y)
    }

    /// Linear part applied to a vector (no translation).
    #[inline]
    pub fn apply_linear(&self, v: Point<T>) -> Point<T> {
        let m = self.matrix();
        Point::new(m[0][0] * v.x + m[0][1] * v.y, m[1][0] * v.x + m[1][1] * v.y)
    }

    /// Closed-form inverse map; `None` for singular matrices.
    pub fn apply_inverse(&self, q: Point<T>) -> Option<Point<T>> {
        let m = self.matrix();
        let det = self.det();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let d = q - self.translation();
        Some(Point::new(
            (m[1][1] * d.x - m[0][1] * d.y) / det,
            (-m[1][0] * d.x + m[0][0] * d.y) / det,
        ))
    }

    /// `d(apply(p))/d(theta)`: the x row touches theta[0..3], the y row theta[3..6].
    #[inline]
    pub fn theta_jacobian_row(&self, p: Point<T>) -> [T; 3] {
        [self.alpha * p.x, self.alpha * p.y, self.alpha]
    }
}
