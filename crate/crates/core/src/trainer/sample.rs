use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::imgcore::{resample, resample_mask, warp_mask, Image2D, Interp, Mask2D};
use crate::metrics::{dice_coefficient, hausdorff_distance, mean_landmark_error, urethra_deviation, LandmarkSet, MetricsRow, Stage};
use crate::scalar::Scalar;
use crate::transform::Transform2D;

/// One training or evaluation example at working resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample<T> {
    pub i_f: Image2D<T>,
    pub i_m: Image2D<T>,
    pub s_f: Option<Mask2D<T>>,
    pub s_m: Option<Mask2D<T>>,
    pub landmarks_f: Option<LandmarkSet<T>>,
    pub landmarks_m: Option<LandmarkSet<T>>,
    pub urethra_f: Option<Point<T>>,
    pub urethra_m: Option<Point<T>>,
    pub cancer_label_m: Option<Mask2D<T>>,
}

impl<T: Scalar> PairSample<T> {
    /// An image-only pair, as seen at inference time.
    pub fn images(i_f: Image2D<T>, i_m: Image2D<T>) -> Self {
        Self {
            i_f,
            i_m,
            s_f: None,
            s_m: None,
            landmarks_f: None,
            landmarks_m: None,
            urethra_f: None,
            urethra_m: None,
            cancer_label_m: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.s_f {
            s.check_companion(&self.i_f)?;
        }
        if let Some(s) = &self.s_m {
            s.check_companion(&self.i_m)?;
        }
        if let Some(s) = &self.cancer_label_m {
            s.check_companion(&self.i_m)?;
        }
        match (&self.landmarks_f, &self.landmarks_m) {
            (Some(a), Some(b)) if a.len() != b.len() => {
                Err(Error::ShapeMismatch(format!("{} fixed vs {} moving landmarks", a.len(), b.len())))
            }
            (Some(_), None) | (None, Some(_)) => Err(Error::MissingData("landmarks on one side only".into())),
            _ => Ok(()),
        }
    }

    /// Both masks, or an error naming the weak-supervision requirement.
    pub fn masks(&self) -> Result<(&Mask2D<T>, &Mask2D<T>)> {
        match (&self.s_f, &self.s_m) {
            (Some(f), Some(m)) => Ok((f, m)),
            _ => Err(Error::MissingData(
                "fixed and moving segmentations are required for segmentation-supervised optimization".into(),
            )),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PairSample<U> {
        let lm = |l: &LandmarkSet<T>| LandmarkSet::new(l.points().iter().map(|p| p.cast()).collect()).expect("finite");
        PairSample {
            i_f: self.i_f.cast(),
            i_m: self.i_m.cast(),
            s_f: self.s_f.as_ref().map(Mask2D::cast),
            s_m: self.s_m.as_ref().map(Mask2D::cast),
            landmarks_f: self.landmarks_f.as_ref().map(lm),
            landmarks_m: self.landmarks_m.as_ref().map(lm),
            urethra_f: self.urethra_f.map(Point::cast),
            urethra_m: self.urethra_m.map(Point::cast),
            cancer_label_m: self.cancer_label_m.as_ref().map(Mask2D::cast),
        }
    }

    /// Table metrics of `t` on this pair. The moving mask is pulled back onto
    /// the fixed grid with nearest sampling; the landmark columns are `None`
    /// when the points are absent.
    pub fn metrics(&self, case_id: &str, stage: Stage, t: &Transform2D<T>) -> Result<MetricsRow> {
        let (s_f, s_m) = self.masks()?;
        let warped = warp_mask(s_m, t, s_f.grid(), Interp::Nearest)?;
        let landmark_err_mm = match (&self.landmarks_f, &self.landmarks_m) {
            (Some(f), Some(m)) => Some(mean_landmark_error(f, m, t)?.to_f64_lossy()),
            _ => None,
        };
        let urethra_dev_mm = match (self.urethra_f, self.urethra_m) {
            (Some(_), Some(_)) => Some(urethra_deviation(self.urethra_f, self.urethra_m, t)?.to_f64_lossy()),
            _ => None,
        };
        Ok(MetricsRow {
            case_id: case_id.to_string(),
            stage,
            dice: dice_coefficient(s_f, &warped)?.to_f64_lossy(),
            hausdorff_mm: hausdorff_distance(s_f, &warped)?.to_f64_lossy(),
            urethra_dev_mm,
            landmark_err_mm,
        })
    }

    /// Both images and all rasters resampled onto `grid`; point data is in mm
    /// and carries over unchanged.
    pub fn resampled(&self, grid: &Grid<T>) -> Self {
        Self {
            i_f: resample(&self.i_f, grid),
            i_m: resample(&self.i_m, grid),
            s_f: self.s_f.as_ref().map(|m| resample_mask(m, grid)),
            s_m: self.s_m.as_ref().map(|m| resample_mask(m, grid)),
            cancer_label_m: self.cancer_label_m.as_ref().map(|m| resample_mask(m, grid)),
            ..self.clone()
        }
    }
}

/// The grid covering the same window as `g` at `resolution` mm per pixel,
/// sharing its centre. Returns `g` itself when the spacing already matches.
pub fn working_grid<T: Scalar>(g: &Grid<T>, resolution: T) -> Result<Grid<T>> {
    if (g.spacing - resolution).abs() <= T::lit(1e-12) * resolution {
        return Ok(*g);
    }
    let (ex, ey) = g.extent();
    let w = (ex / resolution).round().to_usize().unwrap_or(0);
    let h = (ey / resolution).round().to_usize().unwrap_or(0);
    let half = T::lit(0.5);
    let centre = g.origin + (g.point(g.width - 1, g.height - 1) - g.origin) * half;
    let origin = Point::new(
        centre.x - T::from_usize_lossy(w.saturating_sub(1)) * resolution * half,
        centre.y - T::from_usize_lossy(h.saturating_sub(1)) * resolution * half,
    );
    Grid::new(w, h, resolution, origin)
}
