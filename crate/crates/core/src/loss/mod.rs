//! Training losses and their exact gradients with respect to transform
//! parameters.
//!
//! * intensity: sum of mean squared errors over the two mono-modal pairs
//! * segmentation: `1 - softDice` between the fixed mask and the bilinearly
//!   warped moving mask
//! * regularization: `||L u||^2` over the working window with
//!   `L = -c_lap Δ - c_graddiv ∇(∇·) + c_id I`, discretized by finite differences
//!
//! The affine objective is `seg + w_int * int`; the deformable objective adds
//! `w_reg * reg`.

mod grad;
mod reg;

pub use grad::{
    mse_with_grad, soft_dice_with_grad, Objective, Trainable, WarpContext, WarpedGrad,
};
pub use reg::{RegularizerOp, RegularizerSpec};

use crate::error::{Error, Result};
use crate::imgcore::{soft_warp_mask, Image2D, Mask2D};
use crate::scalar::Scalar;
use crate::transform::{DisplacementField, Transform2D};
use serde::{Deserialize, Serialize};

/// Dice smoothing constant added to numerator and denominator.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_int: f64,
    pub w_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_int: 0.05, w_reg: 0.05 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_int >= 0.0 && self.w_reg >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("negative loss weight in {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub seg: f64,
    pub int: f64,
    pub reg: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.seg.is_finite() && self.int.is_finite() && self.reg.is_finite()
    }

    /// Componentwise sum; the weighted identity is preserved because both
    /// operands satisfy it with the same weights.
    pub fn sum(&self, other: &Self) -> Self {
        Self {
            total: self.total + other.total,
            seg: self.seg + other.seg,
            int: self.int + other.int,
            reg: self.reg + other.reg,
        }
    }
}

pub fn affine_loss<T: Scalar>(seg: T, int: T, w: &LossWeights) -> LossBreakdown {
    let (seg, int) = (seg.to_f64_lossy(), int.to_f64_lossy());
    LossBreakdown { total: seg + w.w_int * int, seg, int, reg: 0.0 }
}

pub fn deformable_loss<T: Scalar>(seg: T, int: T, reg: T, w: &LossWeights) -> LossBreakdown {
    let (seg, int, reg) = (seg.to_f64_lossy(), int.to_f64_lossy(), reg.to_f64_lossy());
    LossBreakdown { total: seg + w.w_int * int + w.w_reg * reg, seg, int, reg }
}

pub(crate) fn mse<T: Scalar>(a: &[T], b: &[T]) -> T {
    let s: T = a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    s / T::from_usize_lossy(a.len())
}

/// `MSE(i_f, i_f_warped_back) + MSE(i_m, i_m_warped_back)`; all four images on one grid.
pub fn intensity_loss<T: Scalar>(
    i_f: &Image2D<T>,
    i_f_warped_back: &Image2D<T>,
    i_m: &Image2D<T>,
    i_m_warped_back: &Image2D<T>,
) -> Result<T> {
    let g = i_f.grid();
    for other in [i_f_warped_back, i_m, i_m_warped_back] {
        if !other.grid().compatible(g) {
            return Err(Error::GridMismatch("intensity loss images".into()));
        }
    }
    Ok(mse(i_f.data(), i_f_warped_back.data()) + mse(i_m.data(), i_m_warped_back.data()))
}

/// `1 - softDice(s_f, s_m ∘ t)` with the moving mask warped bilinearly onto the fixed grid.
pub fn segmentation_loss<T: Scalar>(s_f: &Mask2D<T>, s_m: &Mask2D<T>, t: &Transform2D<T>) -> T {
    let warped = soft_warp_mask(s_m, t, s_f.grid());
    let fixed = s_f.to_image();
    soft_dice_with_grad(fixed.data(), warped.data()).0
}

/// `sum |L u|^2 * pixel_area` over the field's grid.
pub fn regularization_loss<T: Scalar>(u: &DisplacementField<T>, spec: &RegularizerSpec) -> Result<T> {
    if !u.is_finite() {
        return Err(Error::NonFinite("displacement field".into()));
    }
    let op = RegularizerOp::new(&u.grid, spec)?;
    Ok(op.energy(&u.u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Grid, Point};
    use crate::transform::{displacement_field, AffineParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weighted_combinations() {
        let w = LossWeights::default();
        assert!((affine_loss(0.2, 1.0, &w).total - 0.25).abs() < 1e-15);
        assert_eq!(affine_loss(0.0, 0.0, &w).total, 0.0);
        assert_eq!(affine_loss(1.0, 0.0, &w).total, 1.0);
        assert!((deformable_loss(0.2, 1.0, 2.0, &w).total - 0.35).abs() < 1e-15);
        assert_eq!(deformable_loss(0.0, 0.0, 0.0, &w).total, 0.0);
        assert!((deformable_loss(0.0, 0.0, 1.0, &w).total - 0.05).abs() < 1e-15);
        assert_eq!(affine_loss(0.3, 0.7, &w).reg, 0.0);
    }

    fn grid() -> Grid<f64> {
        Grid::centered(8, 8, 1.0).unwrap()
    }

    #[test]
    fn intensity_loss_cases() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Image2D::from_fn(g, |_, _, _| rng.random::<f64>()).unwrap();
        let b = Image2D::from_fn(g, |_, _, _| rng.random::<f64>()).unwrap();
        assert_eq!(intensity_loss(&a, &a, &b, &b).unwrap(), 0.0);
        let c1 = Image2D::filled(g, 0.8).unwrap();
        let c2 = Image2D::filled(g, 0.3).unwrap();
        assert!((intensity_loss(&c1, &c2, &a, &a).unwrap() - 0.25).abs() < 1e-15);
        // brute-force oracle
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for k in 0..g.len() {
            s1 += (a.data()[k] - b.data()[k]).powi(2);
            s2 += (b.data()[k] - c1.data()[k]).powi(2);
        }
        let expect = s1 / 64.0 + s2 / 64.0;
        assert!((intensity_loss(&a, &b, &b, &c1).unwrap() - expect).abs() < 1e-14);
        let other = Image2D::filled(Grid::centered(8, 8, 2.0).unwrap(), 0.1).unwrap();
        assert!(intensity_loss(&a, &other, &a, &a).is_err());
    }

    #[test]
    fn segmentation_loss_cases() {
        let g = grid();
        let id = Transform2D::identity_affine();
        let a = Mask2D::from_fn(g, |i, j, _| (2..5).contains(&i) && (1..6).contains(&j));
        assert!(segmentation_loss(&a, &a, &id) < 1e-6);
        let far = Mask2D::from_fn(g, |i, _, _| i == 7);
        assert!((segmentation_loss(&a, &far, &id) - 1.0).abs() < 1e-6);
        // 2x2 squares overlapping in 2 pixels: 1 - 2*2/(4+4)
        let r1 = Mask2D::from_fn(g, |i, j, _| (1..3).contains(&i) && (1..3).contains(&j));
        let r2 = Mask2D::from_fn(g, |i, j, _| (2..4).contains(&i) && (1..3).contains(&j));
        assert!((segmentation_loss(&r1, &r2, &id) - 0.5).abs() < 1e-6);
        let empty = Mask2D::empty(g);
        assert_eq!(segmentation_loss(&empty, &empty, &id), 0.0);
        assert!((segmentation_loss(&empty, &a, &id) - 1.0).abs() < 1e-6);
        assert!((segmentation_loss(&a, &empty, &id) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn regularizer_zero_field() {
        let g = grid();
        let u = DisplacementField::zeros(g);
        assert_eq!(regularization_loss(&u, &RegularizerSpec::default()).unwrap(), 0.0);
    }

    #[test]
    fn regularizer_constant_field() {
        let g = Grid::centered(16, 12, 1.5).unwrap();
        let t = Point::new(2.0, -3.0);
        let u = DisplacementField { grid: g, u: vec![t; g.len()] };
        let area = g.len() as f64 * 1.5 * 1.5;
        let expect = 1e-4 * (4.0 + 9.0) * area;
        let got = regularization_loss(&u, &RegularizerSpec::default()).unwrap();
        assert!(((got - expect) / expect).abs() < 1e-6);
    }

    #[test]
    fn regularizer_linear_field() {
        let g = Grid::centered(64, 64, 1.5625).unwrap();
        let a = AffineParams::new([1000.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.001);
        let u = displacement_field(&Transform2D::Affine(a), &g);
        // u = (x, 0): closed form 1e-4 * ∫ x^2 dA over the window [-50, 50]^2
        let half: f64 = 50.0;
        let expect = 1e-4 * (2.0 * half.powi(3) / 3.0) * (2.0 * half);
        let got = regularization_loss(&u, &RegularizerSpec::default()).unwrap();
        assert!(((got - expect) / expect).abs() < 0.01, "{got} vs {expect}");
    }

    #[test]
    fn regularizer_rejects_non_finite() {
        let g = grid();
        let mut u = DisplacementField::zeros(g);
        u.u[3].x = f64::NAN;
        assert!(regularization_loss(&u, &RegularizerSpec::default()).is_err());
    }
}
