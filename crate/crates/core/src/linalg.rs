//! Dense linear solves for the small systems in this crate.

use crate::scalar::Scalar;

/// LU factorization with partial pivoting of a square row-major matrix.
pub(crate) struct Lu<T> {
    n: usize,
    a: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Returns `None` when a pivot falls below `rel_tol * max|a_ij|`.
    pub fn factor(mut a: Vec<T>, n: usize, rel_tol: T) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !(scale > T::zero()) {
            return None;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|r| (r, a[r * n + k].abs()))
                .fold((k, T::zero()), |best, c| if c.1 > best.1 { c } else { best });
            if pv <= rel_tol * scale {
                return None;
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let piv = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / piv;
                a[r * n + k] = f;
                for c in k + 1..n {
                    let v = a[k * n + c];
                    a[r * n + c] -= f * v;
                }
            }
        }
        Some(Self { n, a, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                let v = x[c];
                x[r] -= self.a[r * n + c] * v;
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                let v = x[c];
                x[r] -= self.a[r * n + c] * v;
            }
            x[r] /= self.a[r * n + r];
        }
        x
    }
}
