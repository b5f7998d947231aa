use super::{AffineParams, TpsBasis, TpsParams, Transform2D};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGridJson {
    pub points: Vec<[f64; 2]>,
}

/// On-disk form. Composite transforms store the 6 affine parameters followed
/// by the 32 spline parameters in `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformJson {
    #[serde(rename = "type")]
    pub kind: String,
    pub alpha: f64,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_grid: Option<ControlGridJson>,
}

fn grid_json<T: Scalar>(b: &TpsBasis<T>) -> ControlGridJson {
    ControlGridJson { points: b.control_points().iter().map(|p| p.to_array_f64()).collect() }
}

impl TransformJson {
    pub fn from_transform<T: Scalar>(t: &Transform2D<T>) -> Self {
        let f = |v: &T| v.to_f64_lossy();
        match t {
            Transform2D::Affine(a) => Self {
                kind: "affine".into(),
                alpha: a.alpha.to_f64_lossy(),
                theta: a.theta.iter().map(f).collect(),
                control_grid: None,
            },
            Transform2D::Tps(s) => Self {
                kind: "tps".into(),
                alpha: s.alpha.to_f64_lossy(),
                theta: s.theta().iter().map(f).collect(),
                control_grid: Some(grid_json(s.basis())),
            },
            Transform2D::Composite { affine, tps } => Self {
                kind: "composite".into(),
                alpha: affine.alpha.to_f64_lossy(),
                theta: affine.theta.iter().chain(tps.theta()).map(f).collect(),
                control_grid: Some(grid_json(tps.basis())),
            },
        }
    }

    pub fn to_transform<T: Scalar>(&self) -> Result<Transform2D<T>> {
        let alpha = T::lit(self.alpha);
        let basis = || -> Result<Arc<TpsBasis<T>>> {
            let g = self
                .control_grid
                .as_ref()
                .ok_or_else(|| Error::InvalidTransform("missing control_grid".into()))?;
            Ok(Arc::new(TpsBasis::new(g.points.iter().map(|p| Point::from_array_f64(*p)).collect())?))
        };
        let theta: Vec<T> = self.theta.iter().map(|v| T::lit(*v)).collect();
        let affine = |s: &[T]| -> Result<AffineParams<T>> {
            let arr: [T; 6] = s
                .try_into()
                .map_err(|_| Error::InvalidTransform(format!("affine expects 6 parameters, got {}", s.len())))?;
            Ok(AffineParams::new(arr, alpha))
        };
        match self.kind.as_str() {
            "affine" => Ok(Transform2D::Affine(affine(&theta)?)),
            "tps" => Ok(Transform2D::Tps(TpsParams::new(basis()?, theta, alpha)?)),
            "composite" => {
                if theta.len() < 6 {
                    return Err(Error::InvalidTransform("composite theta too short".into()));
                }
                let (a, s) = theta.split_at(6);
                Ok(Transform2D::Composite {
                    affine: affine(a)?,
                    tps: TpsParams::new(basis()?, s.to_vec(), alpha)?,
                })
            }
            other => Err(Error::InvalidTransform(format!("unknown transform type {other:?}"))),
        }
    }

    pub fn to_string_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
