use super::adam::AdamState;
use super::PairSample;
use crate::error::{Error, Result};
use crate::loss::{LossWeights, Objective, RegularizerSpec, Trainable, WarpContext};
use crate::scalar::Scalar;
use crate::transform::{AffineParams, TpsBasis, TpsParams, Transform2D, DEFAULT_ALPHA, DEFAULT_TPS_MARGIN};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Settings of the network-free optimizer. Learning rates are physical step
/// sizes: dimensionless for the linear part, mm for translations and
/// control-point displacements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectConfig {
    pub weights: LossWeights,
    pub regularizer: RegularizerSpec,
    pub affine_iterations: usize,
    pub tps_iterations: usize,
    pub lr_linear: f64,
    pub lr_translation_mm: f64,
    pub lr_tps_mm: f64,
    pub max_halvings: usize,
    pub max_restarts: usize,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            regularizer: RegularizerSpec::default(),
            affine_iterations: 300,
            tps_iterations: 150,
            lr_linear: 0.01,
            lr_translation_mm: 0.5,
            lr_tps_mm: 0.5,
            max_halvings: 20,
            max_restarts: 8,
        }
    }
}

impl DirectConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_linear, self.lr_translation_mm, self.lr_tps_mm];
        if lrs.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!("direct optimizer step sizes {lrs:?}")));
        }
        self.weights.validate()?;
        self.regularizer.validate()
    }
}

/// Result of [`optimize_pair_direct_traced`]: both stages and the objective
/// value after every accepted iterate (starting with the initial value).
#[derive(Clone, Debug)]
pub struct DirectResult<T> {
    pub affine: Transform2D<T>,
    pub composite: Transform2D<T>,
    pub affine_trace: Vec<f64>,
    pub tps_trace: Vec<f64>,
}

/// Adam on `theta` with backtracking: a proposed step is halved until the
/// objective does not increase. When no halving helps, the base rate is halved
/// and the moments restart; the search ends after `max_restarts` such events.
fn minimize<T: Scalar>(
    theta: &mut [T],
    lr: &[T],
    iterations: usize,
    max_halvings: usize,
    max_restarts: usize,
    mut f: impl FnMut(&[T]) -> Result<(f64, Vec<T>)>,
) -> Result<Vec<f64>> {
    let (mut cur, mut grad) = f(theta)?;
    if !cur.is_finite() {
        return Err(Error::NonFinite("direct optimizer objective".into()));
    }
    let mut trace = vec![cur];
    let mut lr = lr.to_vec();
    let mut adam = AdamState::new(&[theta.len()]);
    let mut restarts = 0;
    for _ in 0..iterations {
        let mut proposal = theta.to_vec();
        adam.step(&mut proposal, &grad, &lr)?;
        let step: Vec<T> = theta.iter().zip(&proposal).map(|(a, b)| *a - *b).collect();
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..=max_halvings {
            let trial: Vec<T> = theta.iter().zip(&step).map(|(a, s)| *a - scale * *s).collect();
            let (l, g) = f(&trial)?;
            if l.is_finite() && l <= cur {
                theta.copy_from_slice(&trial);
                cur = l;
                grad = g;
                trace.push(cur);
                accepted = true;
                break;
            }
            scale = scale * T::lit(0.5);
        }
        if !accepted {
            restarts += 1;
            if restarts > max_restarts {
                break;
            }
            lr.iter_mut().for_each(|v| *v = *v * T::lit(0.5));
            adam = AdamState::new(&[theta.len()]);
        }
    }
    Ok(trace)
}

/// Minimizes the segmentation objective over the affine parameters, then over
/// the spline parameters (plus the weighted regularizer) with the affine
/// fixed. Requires both masks. Intensity terms need mono-modal pairs produced
/// by a network and are not part of this per-pair objective.
pub fn optimize_pair_direct_traced<T: Scalar>(s: &PairSample<T>, cfg: &DirectConfig) -> Result<DirectResult<T>> {
    cfg.validate()?;
    s.validate()?;
    let (s_f, s_m) = s.masks()?;
    let grid = *s_f.grid();
    let basis = Arc::new(TpsBasis::for_grid(&grid, T::lit(DEFAULT_TPS_MARGIN))?);
    let ctx = WarpContext::new(grid, basis.clone(), &cfg.regularizer)?;
    let alpha = T::lit(DEFAULT_ALPHA);

    let obj = Objective { seg: Some((s_f, s_m)), intensity: Vec::new(), regularize: false, weights: cfg.weights };
    let (lin, tr) = (T::lit(cfg.lr_linear) / alpha, T::lit(cfg.lr_translation_mm) / alpha);
    let lr_affine = [lin, lin, tr, lin, lin, tr];
    let mut theta_a = vec![T::zero(); 6];
    let to_affine = |th: &[T]| AffineParams::new([th[0], th[1], th[2], th[3], th[4], th[5]], alpha);
    let affine_trace = minimize(&mut theta_a, &lr_affine, cfg.affine_iterations, cfg.max_halvings, cfg.max_restarts, |th| {
        let (l, g) = obj.evaluate(&ctx, &Transform2D::Affine(to_affine(th)), Trainable::Affine)?;
        Ok((l.total, g))
    })?;
    let a = to_affine(&theta_a);

    let obj = Objective { regularize: true, ..obj };
    let lr_tps = [T::lit(cfg.lr_tps_mm) / alpha];
    let mut theta_t = vec![T::zero(); Trainable::Tps.len()];
    let composite = |th: &[T]| -> Result<Transform2D<T>> {
        Ok(Transform2D::Composite { affine: a.clone(), tps: TpsParams::new(basis.clone(), th.to_vec(), alpha)? })
    };
    let tps_trace = minimize(&mut theta_t, &lr_tps, cfg.tps_iterations, cfg.max_halvings, cfg.max_restarts, |th| {
        let (l, g) = obj.evaluate(&ctx, &composite(th)?, Trainable::Tps)?;
        Ok((l.total, g))
    })?;

    Ok(DirectResult { affine: Transform2D::Affine(a), composite: composite(&theta_t)?, affine_trace, tps_trace })
}

/// The composite transform found by [`optimize_pair_direct_traced`].
pub fn optimize_pair_direct<T: Scalar>(s: &PairSample<T>, cfg: &DirectConfig) -> Result<Transform2D<T>> {
    Ok(optimize_pair_direct_traced(s, cfg)?.composite)
}
