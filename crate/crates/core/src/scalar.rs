//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the engine is generic over: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every `f64` is representable (possibly rounded)
    /// in both supported types, so this never fails.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::lit(v as f64)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// `c = op(a) op(b) + beta c` for row-major `c` (`m x n`). `a` is stored
    /// `m x k`, or `k x m` when `a_t`; `b` is `k x n`, or `n x k` when `b_t`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);
}

/// Checks the operand sizes and returns the (row, column) strides of `a` and `b`.
fn gemm_strides(m: usize, k: usize, n: usize, la: usize, a_t: bool, lb: usize, b_t: bool, lc: usize) -> [isize; 4] {
    assert!(la >= m * k && lb >= k * n && lc >= m * n, "gemm operand sizes");
    let (m, k, n) = (m as isize, k as isize, n as isize);
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    [rsa, csa, rsb, csb]
}

macro_rules! scalar_impl {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]) {
                let [rsa, csa, rsb, csb] = gemm_strides(m, k, n, a.len(), a_t, b.len(), b_t, c.len());
                // SAFETY: the strides address at most m*k, k*n and m*n elements,
                // which the length check above guarantees are in bounds.
                unsafe {
                    $gemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }
        }
    };
}

scalar_impl!(f32, matrixmultiply::sgemm);
scalar_impl!(f64, matrixmultiply::dgemm);
