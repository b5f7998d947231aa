//! Geometric transformation models mapping fixed-image millimetres to
//! moving-image millimetres: the alpha-scaled affine, the 4x4 thin-plate
//! spline, and their composite.

mod affine;
mod field;
mod json;
mod random;
mod tps;

pub use affine::AffineParams;
pub use field::{displacement_field, DisplacementField};
pub use json::TransformJson;
pub use random::{sample_random_transform, RandomTransformSpec};
pub use tps::{TpsBasis, TpsParams, TPS_CONTROL_POINTS, TPS_GRID_SIDE, TPS_PARAMS};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::imgcore::Mapping;
use crate::scalar::Scalar;
use std::sync::Arc;

/// Default parameter scaling constant applied to every network output.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// Fraction of the window span by which the spline control grid overhangs it.
pub const DEFAULT_TPS_MARGIN: f64 = 0.1;

#[derive(Clone, Debug)]
pub enum Transform2D<T> {
    Affine(AffineParams<T>),
    Tps(TpsParams<T>),
    /// `p -> affine(tps(p))`: the spline refines in fixed space, then the
    /// affine carries the result into moving space.
    Composite { affine: AffineParams<T>, tps: TpsParams<T> },
}

impl<T: Scalar> PartialEq for Transform2D<T> {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Affine(a), Self::Affine(b)) => a == b,
            (Self::Tps(a), Self::Tps(b)) => a == b,
            (Self::Composite { affine: a, tps: s }, Self::Composite { affine: b, tps: t }) => a == b && s == t,
            _ => false,
        }
    }
}

impl<T: Scalar> Transform2D<T> {
    pub fn identity_affine() -> Self {
        Self::Affine(AffineParams::identity(T::lit(DEFAULT_ALPHA)))
    }

    pub fn identity_composite(basis: Arc<TpsBasis<T>>) -> Self {
        Self::Composite {
            affine: AffineParams::identity(T::lit(DEFAULT_ALPHA)),
            tps: TpsParams::zero(basis, T::lit(DEFAULT_ALPHA)),
        }
    }

    #[inline]
    pub fn apply(&self, p: Point<T>) -> Point<T> {
        match self {
            Self::Affine(a) => a.apply(p),
            Self::Tps(t) => t.apply(p),
            Self::Composite { affine, tps } => affine.apply(tps.apply(p)),
        }
    }

    pub fn affine_part(&self) -> Option<&AffineParams<T>> {
        match self {
            Self::Affine(a) | Self::Composite { affine: a, .. } => Some(a),
            Self::Tps(_) => None,
        }
    }

    pub fn tps_part(&self) -> Option<&TpsParams<T>> {
        match self {
            Self::Tps(t) | Self::Composite { tps: t, .. } => Some(t),
            Self::Affine(_) => None,
        }
    }

    /// Refuses folded (orientation-reversing) affine parts and non-finite parameters.
    pub fn validate_for_warp(&self) -> Result<()> {
        if let Some(a) = self.affine_part() {
            if !(a.det() > T::zero()) {
                return Err(Error::InvalidTransform(format!(
                    "affine determinant {} is not positive",
                    a.det()
                )));
            }
            if a.theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("affine parameters".into()));
            }
        }
        if let Some(t) = self.tps_part() {
            if t.theta().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("tps parameters".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> TransformJson {
        TransformJson::from_transform(self)
    }
}

impl<T: Scalar> Mapping<T> for Transform2D<T> {
    #[inline]
    fn map_point(&self, p: Point<T>) -> Point<T> {
        self.apply(p)
    }
}
