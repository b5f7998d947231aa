//! Registration quality metrics and Table-style aggregation.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::imgcore::Mask2D;
use crate::scalar::Scalar;
use crate::transform::Transform2D;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::Path;

/// Ordered landmark list; paired sets are compared index by index.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet<T> {
    points: Vec<Point<T>>,
}

impl<T: Scalar> LandmarkSet<T> {
    pub fn new(points: Vec<Point<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::MissingData("landmark set is empty".into()));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("landmark coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_arrays(a: &[[f64; 2]]) -> Result<Self> {
        Self::new(a.iter().map(|p| Point::from_array_f64(*p)).collect())
    }

    pub fn to_arrays(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| p.to_array_f64()).collect()
    }
}

/// `2|a ∩ b| / (|a| + |b|)` over hard masks.
pub fn dice_coefficient<T: Scalar>(a: &Mask2D<T>, b: &Mask2D<T>) -> Result<T> {
    if !a.grid().compatible(b.grid()) {
        return Err(Error::GridMismatch("dice operands".into()));
    }
    let mut inter = 0usize;
    for (x, y) in a.data().iter().zip(b.data()) {
        if *x != 0 && *y != 0 {
            inter += 1;
        }
    }
    let total = a.count() + b.count();
    if total == 0 {
        return Err(Error::UndefinedMetric("dice of two empty masks".into()));
    }
    Ok(T::from_usize_lossy(2 * inter) / T::from_usize_lossy(total))
}

/// Inner 4-connected boundary: mask pixels touching the image edge or an
/// outside pixel, as points in mm.
pub fn boundary_points<T: Scalar>(m: &Mask2D<T>) -> Vec<Point<T>> {
    let g = m.grid();
    let (w, h) = (g.width, g.height);
    let mut out = Vec::new();
    for j in 0..h {
        for i in 0..w {
            if !m.get(i, j) {
                continue;
            }
            let edge = i == 0 || j == 0 || i + 1 == w || j + 1 == h;
            if edge || !m.get(i - 1, j) || !m.get(i + 1, j) || !m.get(i, j - 1) || !m.get(i, j + 1) {
                out.push(g.point(i, j));
            }
        }
    }
    out
}

fn directed_hausdorff<T: Scalar>(from: &[Point<T>], to: &[Point<T>]) -> T {
    let mut worst = T::zero();
    for p in from {
        let mut best = T::infinity();
        for q in to {
            let d = p.dist(*q);
            if d < best {
                best = d;
            }
        }
        if best > worst {
            worst = best;
        }
    }
    worst
}

/// Symmetric Hausdorff distance between the mask boundaries, in mm (exact).
pub fn hausdorff_distance<T: Scalar>(a: &Mask2D<T>, b: &Mask2D<T>) -> Result<T> {
    if !a.grid().compatible(b.grid()) {
        return Err(Error::GridMismatch("hausdorff operands".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("hausdorff distance of an empty mask".into()));
    }
    let (ba, bb) = (boundary_points(a), boundary_points(b));
    Ok(directed_hausdorff(&ba, &bb).max(directed_hausdorff(&bb, &ba)))
}

/// Mean of `|p'_i - t(p_i)|` over paired landmarks.
pub fn mean_landmark_error<T: Scalar>(
    fixed: &LandmarkSet<T>,
    moving: &LandmarkSet<T>,
    t: &Transform2D<T>,
) -> Result<T> {
    if fixed.len() != moving.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fixed landmarks vs {} moving landmarks",
            fixed.len(),
            moving.len()
        )));
    }
    let sum: T = fixed.points.iter().zip(&moving.points).map(|(p, q)| q.dist(t.apply(*p))).sum();
    Ok(sum / T::from_usize_lossy(fixed.len()))
}

/// Landmark error of the single urethra-centre pair.
pub fn urethra_deviation<T: Scalar>(
    fixed: Option<Point<T>>,
    moving: Option<Point<T>>,
    t: &Transform2D<T>,
) -> Result<T> {
    match (fixed, moving) {
        (Some(f), Some(m)) => mean_landmark_error(&LandmarkSet::new(vec![f])?, &LandmarkSet::new(vec![m])?, t),
        _ => Err(Error::MissingData("urethra centre".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Input,
    Affine,
    Composite,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Input => "input",
            Stage::Affine => "affine",
            Stage::Composite => "composite",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case_id: String,
    pub stage: Stage,
    pub dice: f64,
    pub hausdorff_mm: f64,
    pub urethra_dev_mm: Option<f64>,
    pub landmark_err_mm: Option<f64>,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt(), n: values.len() })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} (± {:.2})", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub stage: Stage,
    pub cases: usize,
    pub dice: Summary,
    pub hausdorff_mm: Summary,
    pub urethra_dev_mm: Option<Summary>,
    pub landmark_err_mm: Option<Summary>,
}

/// Groups rows by stage (in stage order) and summarizes every metric.
pub fn aggregate_table(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut stages: Vec<Stage> = rows.iter().map(|r| r.stage).collect();
    stages.sort();
    stages.dedup();
    stages
        .into_iter()
        .filter_map(|stage| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.stage == stage).collect();
            let col = |f: &dyn Fn(&MetricsRow) -> Option<f64>| -> Vec<f64> { group.iter().filter_map(|r| f(r)).collect() };
            Some(AggregateRow {
                stage,
                cases: group.len(),
                dice: Summary::of(&col(&|r| Some(r.dice)))?,
                hausdorff_mm: Summary::of(&col(&|r| Some(r.hausdorff_mm)))?,
                urethra_dev_mm: Summary::of(&col(&|r| r.urethra_dev_mm)),
                landmark_err_mm: Summary::of(&col(&|r| r.landmark_err_mm)),
            })
        })
        .collect()
}

/// Plain-text rendering with one line per stage.
pub fn render_table(table: &[AggregateRow]) -> String {
    let cell = |s: &Option<Summary>| s.map_or_else(|| "n/a".to_string(), |s| s.to_string());
    let mut out = format!(
        "{:<10} {:>16} {:>16} {:>16} {:>16}\n",
        "stage", "dice", "hausdorff_mm", "urethra_dev_mm", "landmark_err_mm"
    );
    for r in table {
        out += &format!(
            "{:<10} {:>16} {:>16} {:>16} {:>16}\n",
            r.stage.to_string(),
            r.dice.to_string(),
            r.hausdorff_mm.to_string(),
            cell(&r.urethra_dev_mm),
            cell(&r.landmark_err_mm)
        );
    }
    out
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let bytes = crate::imgcore::io::read_file(path)?;
    let mut r = csv::Reader::from_reader(&bytes[..]);
    r.deserialize().map(|row| row.map_err(|e| Error::Io(std::io::Error::other(e)))).collect()
}
