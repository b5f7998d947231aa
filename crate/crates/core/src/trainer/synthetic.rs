use super::PairSample;
use crate::error::Result;
use crate::imgcore::{warp, Image2D, Interp};
use crate::scalar::Scalar;
use crate::transform::{sample_random_transform, RandomTransformSpec, TpsBasis, Transform2D};
use rand::Rng;
use std::sync::Arc;

/// An image and a randomly warped copy of itself: `warped(x) = reference(gt(x))`.
#[derive(Clone, Debug)]
pub struct MonoPair<T> {
    pub reference: Image2D<T>,
    pub warped: Image2D<T>,
    /// Kept for diagnostics only; the losses never see it.
    pub gt: Transform2D<T>,
}

impl<T: Scalar> MonoPair<T> {
    pub fn new<R: Rng + ?Sized>(
        img: &Image2D<T>,
        spec: &RandomTransformSpec,
        basis: Arc<TpsBasis<T>>,
        rng: &mut R,
    ) -> Result<Self> {
        let gt = sample_random_transform(spec, basis, rng);
        gt.validate_for_warp()?;
        let warped = warp(img, &gt, img.grid(), Interp::Bilinear);
        Ok(Self { reference: img.clone(), warped, gt })
    }
}

/// Two independently warped mono-modal pairs, fixed side first.
pub fn make_synthetic_pair<T: Scalar, R: Rng + ?Sized>(
    s: &PairSample<T>,
    spec: &RandomTransformSpec,
    basis: Arc<TpsBasis<T>>,
    rng: &mut R,
) -> Result<(MonoPair<T>, MonoPair<T>)> {
    s.validate()?;
    spec.validate()?;
    let f = MonoPair::new(&s.i_f, spec, basis.clone(), rng)?;
    let m = MonoPair::new(&s.i_m, spec, basis, rng)?;
    Ok((f, m))
}
