use super::reg::{RegularizerOp, RegularizerSpec};
use super::{affine_loss, deformable_loss, LossBreakdown, LossWeights, DICE_EPS};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::imgcore::{sample_bilinear_grad, Image2D, Mask2D};
use crate::scalar::Scalar;
use crate::transform::{
    AffineParams, DisplacementField, TpsBasis, TpsParams, Transform2D, TPS_CONTROL_POINTS, TPS_PARAMS,
};
use std::sync::Arc;

/// Which parameter block of a transform receives the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    /// The 6 affine parameters (of an affine or a composite transform).
    Affine,
    /// The 32 spline parameters (of a spline or a composite transform).
    Tps,
}

impl Trainable {
    pub fn len(self) -> usize {
        match self {
            Self::Affine => 6,
            Self::Tps => TPS_PARAMS,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

/// `MSE(reference, warped)` and its derivative with respect to each warped sample.
pub fn mse_with_grad<T: Scalar>(reference: &[T], warped: &[T]) -> (T, Vec<T>) {
    let n = T::from_usize_lossy(reference.len());
    let two_n = (T::one() + T::one()) / n;
    let mut s = T::zero();
    let grad = reference
        .iter()
        .zip(warped)
        .map(|(r, w)| {
            let d = *w - *r;
            s += d * d;
            two_n * d
        })
        .collect();
    (s / n, grad)
}

/// `1 - (2 sum(f w) + eps) / (sum f + sum w + eps)` and its derivative with respect to `w`.
pub fn soft_dice_with_grad<T: Scalar>(fixed: &[T], warped: &[T]) -> (T, Vec<T>) {
    let eps = T::lit(DICE_EPS);
    let two = T::one() + T::one();
    let (mut inter, mut sf, mut sw) = (T::zero(), T::zero(), T::zero());
    for (f, w) in fixed.iter().zip(warped) {
        inter += *f * *w;
        sf += *f;
        sw += *w;
    }
    let num = two * inter + eps;
    let den = sf + sw + eps;
    let den2 = den * den;
    let grad = fixed.iter().map(|f| -(two * *f * den - num) / den2).collect();
    (T::one() - num / den, grad)
}

/// Warped samples with the spatial image gradient at each mapped point, plus the
/// intermediate points the affine part was applied to.
#[derive(Clone, Debug)]
pub struct WarpedGrad<T> {
    pub values: Vec<T>,
    pub spatial: Vec<Point<T>>,
    pub inner: Vec<Point<T>>,
}

/// Per-grid cache for gradient evaluation: spline weights at every pixel and
/// the discretized regularizer.
#[derive(Debug)]
pub struct WarpContext<T> {
    grid: Grid<T>,
    basis: Arc<TpsBasis<T>>,
    weights: Vec<[T; TPS_CONTROL_POINTS]>,
    reg: RegularizerOp<T>,
}

impl<T: Scalar> WarpContext<T> {
    pub fn new(grid: Grid<T>, basis: Arc<TpsBasis<T>>, reg: &RegularizerSpec) -> Result<Self> {
        let weights = basis.grid_weights(&grid);
        let reg = RegularizerOp::new(&grid, reg)?;
        Ok(Self { grid, basis, weights, reg })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn basis(&self) -> &Arc<TpsBasis<T>> {
        &self.basis
    }

    fn weights_for<'a>(&'a self, tps: &TpsParams<T>) -> std::borrow::Cow<'a, [[T; TPS_CONTROL_POINTS]]> {
        if Arc::ptr_eq(tps.basis(), &self.basis) || **tps.basis() == *self.basis {
            std::borrow::Cow::Borrowed(&self.weights)
        } else {
            std::borrow::Cow::Owned(tps.basis().grid_weights(&self.grid))
        }
    }

    /// `(t(x), inner(x))` for every pixel centre `x`.
    pub fn map_grid(&self, t: &Transform2D<T>) -> (Vec<Point<T>>, Vec<Point<T>>) {
        let pts = self.grid.points();
        match t {
            Transform2D::Affine(a) => (pts.iter().map(|p| a.apply(*p)).collect(), pts),
            Transform2D::Tps(s) => {
                let w = self.weights_for(s);
                let inner: Vec<Point<T>> = pts.iter().zip(w.iter()).map(|(p, w)| *p + s.displacement_with(w)).collect();
                (inner.clone(), pts)
            }
            Transform2D::Composite { affine, tps } => {
                let w = self.weights_for(tps);
                let inner: Vec<Point<T>> =
                    pts.iter().zip(w.iter()).map(|(p, w)| *p + tps.displacement_with(w)).collect();
                (inner.iter().map(|q| affine.apply(*q)).collect(), inner)
            }
        }
    }

    /// Bilinear pull-back of `img` through `t` onto the context grid, with gradients.
    pub fn warp_with_grad(&self, img: &Image2D<T>, t: &Transform2D<T>) -> WarpedGrad<T> {
        let (mapped, inner) = self.map_grid(t);
        let mut values = Vec::with_capacity(mapped.len());
        let mut spatial = Vec::with_capacity(mapped.len());
        for p in &mapped {
            let (v, g) = sample_bilinear_grad(img, *p);
            values.push(v);
            spatial.push(g);
        }
        WarpedGrad { values, spatial, inner }
    }

    /// Chains `dL/dw` (per warped sample) through the sampler and `dt(x)/dθ`.
    pub fn pullback(
        &self,
        t: &Transform2D<T>,
        trainable: Trainable,
        warped: &WarpedGrad<T>,
        dl_dw: &[T],
    ) -> Result<Vec<T>> {
        let mut grad = vec![T::zero(); trainable.len()];
        match (trainable, t) {
            (Trainable::Affine, Transform2D::Affine(a) | Transform2D::Composite { affine: a, .. }) => {
                for ((s, g), q) in dl_dw.iter().zip(&warped.spatial).zip(&warped.inner) {
                    if *s == T::zero() || (g.x == T::zero() && g.y == T::zero()) {
                        continue;
                    }
                    let row = a.theta_jacobian_row(*q);
                    for k in 0..3 {
                        grad[k] += *s * g.x * row[k];
                        grad[3 + k] += *s * g.y * row[k];
                    }
                }
            }
            (Trainable::Tps, Transform2D::Tps(s)) => self.pullback_tps(s, None, warped, dl_dw, &mut grad),
            (Trainable::Tps, Transform2D::Composite { affine, tps }) => {
                self.pullback_tps(tps, Some(affine), warped, dl_dw, &mut grad)
            }
            (which, _) => {
                return Err(Error::InvalidTransform(format!("{which:?} parameters are not part of this transform")))
            }
        }
        Ok(grad)
    }

    fn pullback_tps(
        &self,
        tps: &TpsParams<T>,
        outer: Option<&AffineParams<T>>,
        warped: &WarpedGrad<T>,
        dl_dw: &[T],
        grad: &mut [T],
    ) {
        let w = self.weights_for(tps);
        let m = outer.map(|a| a.matrix());
        let (gx, gy) = grad.split_at_mut(TPS_CONTROL_POINTS);
        for ((s, g), wn) in dl_dw.iter().zip(&warped.spatial).zip(w.iter()) {
            // with an outer affine the spatial gradient is pulled through M^T
            let g = match m {
                Some(m) => Point::new(m[0][0] * g.x + m[1][0] * g.y, m[0][1] * g.x + m[1][1] * g.y),
                None => *g,
            };
            let (ax, ay) = (*s * g.x * tps.alpha, *s * g.y * tps.alpha);
            if ax == T::zero() && ay == T::zero() {
                continue;
            }
            for k in 0..TPS_CONTROL_POINTS {
                gx[k] += ax * wn[k];
                gy[k] += ay * wn[k];
            }
        }
    }

    /// Displacement field of the spline alone on the context grid.
    pub fn tps_field(&self, tps: &TpsParams<T>) -> DisplacementField<T> {
        let w = self.weights_for(tps);
        DisplacementField { grid: self.grid, u: w.iter().map(|wn| tps.displacement_with(wn)).collect() }
    }

    /// Regularization energy of the spline displacement and its gradient in θ.
    pub fn reg_with_grad(&self, tps: &TpsParams<T>) -> (T, Vec<T>) {
        let w = self.weights_for(tps);
        let u: Vec<Point<T>> = w.iter().map(|wn| tps.displacement_with(wn)).collect();
        let (e, gu) = self.reg.energy_with_grad(&u);
        let mut grad = vec![T::zero(); TPS_PARAMS];
        let (gx, gy) = grad.split_at_mut(TPS_CONTROL_POINTS);
        for (wn, g) in w.iter().zip(&gu) {
            for k in 0..TPS_CONTROL_POINTS {
                gx[k] += tps.alpha * wn[k] * g.x;
                gy[k] += tps.alpha * wn[k] * g.y;
            }
        }
        (e, grad)
    }

    /// Soft segmentation loss of `moving ∘ t` against `fixed` and its θ-gradient.
    pub fn seg_with_grad(
        &self,
        fixed: &Mask2D<T>,
        moving: &Mask2D<T>,
        t: &Transform2D<T>,
        trainable: Trainable,
    ) -> Result<(T, Vec<T>)> {
        self.check_grid(fixed.grid(), "fixed mask")?;
        let wg = self.warp_with_grad(&moving.to_image(), t);
        let (l, dl) = soft_dice_with_grad(fixed.to_image().data(), &wg.values);
        Ok((l, self.pullback(t, trainable, &wg, &dl)?))
    }

    /// `MSE(reference, source ∘ t)` and its θ-gradient.
    pub fn mse_with_grad(
        &self,
        reference: &Image2D<T>,
        source: &Image2D<T>,
        t: &Transform2D<T>,
        trainable: Trainable,
    ) -> Result<(T, Vec<T>)> {
        self.check_grid(reference.grid(), "reference image")?;
        let wg = self.warp_with_grad(source, t);
        let (l, dl) = mse_with_grad(reference.data(), &wg.values);
        Ok((l, self.pullback(t, trainable, &wg, &dl)?))
    }

    fn check_grid(&self, g: &Grid<T>, what: &str) -> Result<()> {
        if g.compatible(&self.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what} is not on the working grid")))
        }
    }
}

/// A loss configuration over one transform: optional segmentation term,
/// any number of intensity terms sharing the transform, and optionally the
/// spline regularizer (which selects the deformable weighting).
pub struct Objective<'a, T> {
    pub seg: Option<(&'a Mask2D<T>, &'a Mask2D<T>)>,
    pub intensity: Vec<(&'a Image2D<T>, &'a Image2D<T>)>,
    pub regularize: bool,
    pub weights: LossWeights,
}

impl<'a, T: Scalar> Objective<'a, T> {
    pub fn evaluate(
        &self,
        ctx: &WarpContext<T>,
        t: &Transform2D<T>,
        trainable: Trainable,
    ) -> Result<(LossBreakdown, Vec<T>)> {
        let mut grad = vec![T::zero(); trainable.len()];
        let axpy = |g: &mut Vec<T>, a: T, x: &[T]| g.iter_mut().zip(x).for_each(|(g, x)| *g += a * *x);
        let mut seg = T::zero();
        if let Some((f, m)) = self.seg {
            let (l, g) = ctx.seg_with_grad(f, m, t, trainable)?;
            seg = l;
            axpy(&mut grad, T::one(), &g);
        }
        let mut int = T::zero();
        let w_int = T::lit(self.weights.w_int);
        for (r, s) in &self.intensity {
            let (l, g) = ctx.mse_with_grad(r, s, t, trainable)?;
            int += l;
            axpy(&mut grad, w_int, &g);
        }
        if self.regularize {
            let tps = t.tps_part().ok_or_else(|| Error::InvalidTransform("regularizer needs a spline".into()))?;
            let (reg, g) = ctx.reg_with_grad(tps);
            if trainable == Trainable::Tps {
                axpy(&mut grad, T::lit(self.weights.w_reg), &g);
            }
            Ok((deformable_loss(seg, int, reg, &self.weights), grad))
        } else {
            Ok((affine_loss(seg, int, &self.weights), grad))
        }
    }
}
