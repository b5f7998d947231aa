use super::{AffineParams, TpsBasis, TpsParams, Transform2D, DEFAULT_ALPHA, TPS_CONTROL_POINTS, TPS_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Magnitude bounds for random composite transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomTransformSpec {
    pub rotation_max_deg: f64,
    pub scale_range: [f64; 2],
    pub translation_max_mm: f64,
    pub shear_max: f64,
    pub tps_jitter_max_mm: f64,
    pub seed: u64,
}

impl Default for RandomTransformSpec {
    fn default() -> Self {
        Self {
            rotation_max_deg: 10.0,
            scale_range: [0.9, 1.1],
            translation_max_mm: 5.0,
            shear_max: 0.05,
            tps_jitter_max_mm: 3.0,
            seed: 0,
        }
    }
}

impl RandomTransformSpec {
    pub fn zero() -> Self {
        Self {
            rotation_max_deg: 0.0,
            scale_range: [1.0, 1.0],
            translation_max_mm: 0.0,
            shear_max: 0.0,
            tps_jitter_max_mm: 0.0,
            seed: 0,
        }
    }

    pub fn affine_only(&self) -> Self {
        Self { tps_jitter_max_mm: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        let ok = lo <= 1.0
            && 1.0 <= hi
            && lo > 0.0
            && self.rotation_max_deg >= 0.0
            && self.translation_max_mm >= 0.0
            && self.shear_max >= 0.0
            && self.tps_jitter_max_mm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTransform(format!("invalid random transform spec {self:?}")))
        }
    }
}

#[inline]
fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Composite `affine(tps(p))` with the affine built as rotation * shear * scale
/// plus translation (all uniform within the spec), and independent uniform
/// control-point jitter for the spline.
pub fn sample_random_transform<T: Scalar, R: Rng + ?Sized>(
    spec: &RandomTransformSpec,
    basis: Arc<TpsBasis<T>>,
    rng: &mut R,
) -> Transform2D<T> {
    let rot = uniform(rng, -spec.rotation_max_deg, spec.rotation_max_deg).to_radians();
    let sx = uniform(rng, spec.scale_range[0], spec.scale_range[1]);
    let sy = uniform(rng, spec.scale_range[0], spec.scale_range[1]);
    let shear = uniform(rng, -spec.shear_max, spec.shear_max);
    let tx = uniform(rng, -spec.translation_max_mm, spec.translation_max_mm);
    let ty = uniform(rng, -spec.translation_max_mm, spec.translation_max_mm);
    let (s, c) = rot.sin_cos();
    // R * [[1, shear], [0, 1]] * diag(sx, sy)
    let m = [[c * sx, (c * shear - s) * sy], [s * sx, (s * shear + c) * sy]];
    let alpha = T::lit(DEFAULT_ALPHA);
    let affine = AffineParams::from_matrix(
        [[T::lit(m[0][0]), T::lit(m[0][1])], [T::lit(m[1][0]), T::lit(m[1][1])]],
        Point::new(T::lit(tx), T::lit(ty)),
        alpha,
    );
    let theta: Vec<T> = (0..TPS_PARAMS)
        .map(|_| T::lit(uniform(rng, -spec.tps_jitter_max_mm, spec.tps_jitter_max_mm)) / alpha)
        .collect();
    debug_assert_eq!(theta.len(), 2 * TPS_CONTROL_POINTS);
    let tps = TpsParams::new(basis, theta, alpha).expect("32 parameters");
    Transform2D::Composite { affine, tps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis() -> Arc<TpsBasis<f64>> {
        Arc::new(TpsBasis::for_grid(&Grid::centered(64, 64, 1.5625).unwrap(), 0.1).unwrap())
    }

    #[test]
    fn zero_spec_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = sample_random_transform(&RandomTransformSpec::zero(), basis(), &mut rng);
        let Transform2D::Composite { affine, tps } = &t else { panic!() };
        assert!(affine.theta.iter().all(|v| *v == 0.0));
        assert!(tps.theta().iter().all(|v| *v == 0.0));
        let p = Point::new(4.0, -9.5);
        assert_eq!(t.apply(p), p);
    }

    #[test]
    fn same_seed_same_transform() {
        let spec = RandomTransformSpec::default();
        let a = sample_random_transform::<f64, _>(&spec, basis(), &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_random_transform::<f64, _>(&spec, basis(), &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn draws_respect_bounds() {
        let spec = RandomTransformSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b = basis();
        let (mut sum_tx, mut sum_ty) = (0.0, 0.0);
        let n = 1000;
        for _ in 0..n {
            let t = sample_random_transform::<f64, _>(&spec, b.clone(), &mut rng);
            let Transform2D::Composite { affine, tps } = &t else { panic!() };
            let tr = affine.translation();
            assert!(tr.x.abs() <= 5.0 + 1e-12 && tr.y.abs() <= 5.0 + 1e-12);
            sum_tx += tr.x;
            sum_ty += tr.y;
            // singular values of the linear part stay within the scale/shear envelope
            let m = affine.matrix();
            let det = affine.det();
            assert!(det > 0.9 * 0.9 - 1e-9 && det < 1.1 * 1.1 + 1e-9);
            let rot = m[1][0].atan2(m[0][0]).to_degrees();
            assert!(rot.abs() <= 10.0 + 1e-9);
            for k in 0..TPS_CONTROL_POINTS {
                let d = tps.control_displacement(k);
                assert!(d.x.abs() <= 3.0 + 1e-9 && d.y.abs() <= 3.0 + 1e-9);
            }
        }
        assert!((sum_tx / n as f64).abs() < 0.5);
        assert!((sum_ty / n as f64).abs() < 0.5);
    }

    #[test]
    fn spec_validation() {
        assert!(RandomTransformSpec::default().validate().is_ok());
        let bad = RandomTransformSpec { scale_range: [1.1, 1.2], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
