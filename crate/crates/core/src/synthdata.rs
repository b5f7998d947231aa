//! Deterministic prostate-like phantoms: an "MRI" rendering of a gland with
//! internal structures and a "histology" rendering of the same anatomy under a
//! different intensity transfer, warped by a known ground-truth transform.

use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::imgcore::{crop_center, crop_center_mask, io, pad_to, pad_to_mask, Image2D, Mask2D};
use crate::metrics::{dice_coefficient, mean_landmark_error, LandmarkSet};
use crate::trainer::PairSample;
use crate::transform::{
    sample_random_transform, RandomTransformSpec, TpsBasis, Transform2D, TransformJson, DEFAULT_TPS_MARGIN,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub resolution_mm: f64,
    /// Side of the central fixed-image window and of the padded moving canvas.
    pub window_mm: f64,
    /// Side of the raw "MRI" field of view before cropping.
    pub mri_extent_mm: f64,
    /// Side of the raw "histology" slide before padding.
    pub histology_extent_mm: f64,
    pub gland_semi_axis_x_mm: [f64; 2],
    pub gland_semi_axis_y_mm: [f64; 2],
    pub gland_rotation_max_deg: f64,
    pub gland_offset_max_mm: f64,
    pub n_structures: [usize; 2],
    pub structure_radius_mm: [f64; 2],
    pub urethra_radius_mm: f64,
    pub mri_noise: f64,
    pub histology_noise: f64,
    /// Ground-truth misalignment applied to the histology side.
    pub misalignment: RandomTransformSpec,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            resolution_mm: 1.5625,
            window_mm: 100.0,
            mri_extent_mm: 125.0,
            histology_extent_mm: 81.25,
            gland_semi_axis_x_mm: [18.0, 26.0],
            gland_semi_axis_y_mm: [14.0, 22.0],
            gland_rotation_max_deg: 15.0,
            gland_offset_max_mm: 3.0,
            n_structures: [4, 5],
            structure_radius_mm: [2.5, 5.0],
            urethra_radius_mm: 1.5,
            mri_noise: 0.02,
            histology_noise: 0.02,
            misalignment: RandomTransformSpec {
                scale_range: [0.75, 1.0],
                translation_max_mm: 5.5,
                ..RandomTransformSpec::default()
            },
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Phantom(m));
        if !(self.resolution_mm > 0.0 && self.window_mm > 0.0) {
            return bad("resolution and window must be positive".into());
        }
        if self.mri_extent_mm < self.window_mm || self.histology_extent_mm > self.window_mm {
            return bad("MRI field must cover the window and the slide must fit inside it".into());
        }
        let max_axis = self.gland_semi_axis_x_mm[1].max(self.gland_semi_axis_y_mm[1]);
        if max_axis + self.gland_offset_max_mm + 10.0 > self.window_mm / 2.0 {
            return bad(format!("gland of semi-axis {max_axis} mm leaves less than 10 mm margin"));
        }
        if self.gland_semi_axis_x_mm[0] > self.gland_semi_axis_x_mm[1]
            || self.gland_semi_axis_y_mm[0] > self.gland_semi_axis_y_mm[1]
            || self.structure_radius_mm[0] > self.structure_radius_mm[1]
            || self.n_structures[0] > self.n_structures[1]
            || self.n_structures[0] == 0
        {
            return bad("ranges must be ordered and contain at least one structure".into());
        }
        self.misalignment.validate()
    }

    fn side_px(&self, extent_mm: f64) -> usize {
        (extent_mm / self.resolution_mm).round().max(2.0) as usize
    }

    /// The working grid every sample is brought onto.
    pub fn window_grid(&self) -> Result<Grid<f64>> {
        let n = self.side_px(self.window_mm);
        Grid::centered(n, n, self.resolution_mm)
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    c: Point<f64>,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn new(c: Point<f64>, a: f64, b: f64, angle: f64) -> Self {
        Self { c, a, b, cos: angle.cos(), sin: angle.sin() }
    }

    /// Signed distance along the ray from the centre (negative inside).
    fn sd(&self, p: Point<f64>) -> f64 {
        let d = p - self.c;
        let (u, v) = (self.cos * d.x + self.sin * d.y, -self.sin * d.x + self.cos * d.y);
        let k = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        let r = (u * u + v * v).sqrt();
        if k == 0.0 {
            -self.a.min(self.b)
        } else {
            r * (1.0 - 1.0 / k)
        }
    }

    fn contains(&self, p: Point<f64>) -> bool {
        self.sd(p) <= 0.0
    }

    /// Normalized radius of `p` (1 on the boundary).
    fn level(&self, p: Point<f64>) -> f64 {
        let d = p - self.c;
        let (u, v) = (self.cos * d.x + self.sin * d.y, -self.sin * d.x + self.cos * d.y);
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

/// Soft inside-membership with a 1.5 mm transition band.
fn membership(sd: f64) -> f64 {
    let t = ((0.75 - sd) / 1.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

struct Anatomy {
    gland: Ellipse,
    structures: Vec<Ellipse>,
    urethra: Ellipse,
    phase: [f64; 4],
}

impl Anatomy {
    fn sample<R: Rng>(spec: &PhantomSpec, rng: &mut R) -> Result<Self> {
        let u = |rng: &mut R, r: [f64; 2]| r[0] + (r[1] - r[0]) * rng.random::<f64>();
        let off = spec.gland_offset_max_mm;
        let c = Point::new(u(rng, [-off, off]), u(rng, [-off, off]));
        let (a, b) = (u(rng, spec.gland_semi_axis_x_mm), u(rng, spec.gland_semi_axis_y_mm));
        let rot = spec.gland_rotation_max_deg;
        let gland = Ellipse::new(c, a, b, u(rng, [-rot, rot]).to_radians());
        let ur = spec.urethra_radius_mm;
        let uc = c + Point::new(u(rng, [-2.0, 2.0]), u(rng, [-2.0, 2.0]));
        let urethra = Ellipse::new(uc, ur, ur, 0.0);
        let n = rng.random_range(spec.n_structures[0]..=spec.n_structures[1]);
        let mut structures: Vec<Ellipse> = Vec::with_capacity(n);
        let mut tries = 0;
        while structures.len() < n {
            tries += 1;
            if tries > 5000 {
                return Err(Error::Phantom(format!("could not place {n} structures inside the gland")));
            }
            let r = u(rng, spec.structure_radius_mm);
            let p = Point::new(u(rng, [c.x - a, c.x + a]), u(rng, [c.y - a, c.y + a]));
            // fully inside with a 1.5 mm rim, clear of the urethra and of each other
            let inside = gland.sd(p) <= -(r + 1.5);
            let clear = p.dist(uc) > r + ur + 1.5 && structures.iter().all(|s| p.dist(s.c) > r + s.a + 1.5);
            if inside && clear {
                structures.push(Ellipse::new(p, r, r, 0.0));
            }
        }
        let phase = [(); 4].map(|_| u(rng, [0.0, std::f64::consts::TAU]));
        Ok(Self { gland, structures, urethra, phase })
    }

    fn mri(&self, p: Point<f64>) -> f64 {
        let ph = &self.phase;
        let bg = 0.25 + 0.05 * (p.x / 13.0 + ph[0]).sin() * (p.y / 17.0 + ph[1]).cos();
        let tex = (p.x / 4.0 + ph[2]).sin() * (p.y / 5.0 + ph[3]).sin();
        let mut v = lerp(bg, 0.55 + 0.06 * tex, membership(self.gland.sd(p)));
        for s in &self.structures {
            v = lerp(v, 0.3, membership(s.sd(p)));
        }
        lerp(v, 0.12, membership(self.urethra.sd(p)))
    }

    /// Tissue-only rendering: zero off the gland, bright structures.
    fn histology(&self, p: Point<f64>) -> (f64, f64) {
        let ph = &self.phase;
        let tissue = membership(self.gland.sd(p));
        let tex = (p.x / 3.0 + ph[3]).cos() * (p.y / 4.0 + ph[2]).sin();
        let mut v = 0.82 + 0.05 * tex - 0.08 * self.gland.level(p).min(1.0);
        for s in &self.structures {
            v = lerp(v, 0.98, membership(s.sd(p)));
        }
        v = lerp(v, 0.05, membership(self.urethra.sd(p)));
        (v * tissue, tissue)
    }
}

/// Raw case images on their native grids (what is written to disk).
#[derive(Clone, Debug, PartialEq)]
pub struct RawCase {
    pub fixed: Image2D<f64>,
    pub moving: Image2D<f64>,
    pub fixed_mask: Mask2D<f64>,
    pub moving_mask: Mask2D<f64>,
    pub cancer_label: Mask2D<f64>,
    pub landmarks_f: LandmarkSet<f64>,
    pub landmarks_m: LandmarkSet<f64>,
    pub urethra_f: Point<f64>,
    pub urethra_m: Point<f64>,
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub raw: RawCase,
    pub sample: PairSample<f64>,
    /// Maps fixed coordinates to moving coordinates.
    pub gt: Transform2D<f64>,
    pub seed: u64,
}

impl Phantom {
    /// Dice and mean landmark error before any registration.
    pub fn input_metrics(&self) -> Result<(f64, f64)> {
        let (f, m) = self.sample.masks()?;
        let lf = self.sample.landmarks_f.as_ref().ok_or_else(|| Error::MissingData("landmarks".into()))?;
        let lm = self.sample.landmarks_m.as_ref().ok_or_else(|| Error::MissingData("landmarks".into()))?;
        Ok((dice_coefficient(f, m)?, mean_landmark_error(lf, lm, &Transform2D::identity_affine())?))
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Crops the fixed side and pads the moving side onto the working window.
pub fn prepare_sample(raw: &RawCase, window_mm: f64) -> Result<PairSample<f64>> {
    Ok(PairSample {
        i_f: crop_center(&raw.fixed, window_mm)?,
        i_m: pad_to(&raw.moving, window_mm, 0.0)?,
        s_f: Some(crop_center_mask(&raw.fixed_mask, window_mm)?),
        s_m: Some(pad_to_mask(&raw.moving_mask, window_mm)?),
        landmarks_f: Some(raw.landmarks_f.clone()),
        landmarks_m: Some(raw.landmarks_m.clone()),
        urethra_f: Some(raw.urethra_f),
        urethra_m: Some(raw.urethra_m),
        cancer_label_m: Some(pad_to_mask(&raw.cancer_label, window_mm)?),
    })
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    render_phantom(spec, None)
}

/// A phantom whose moving side is related to the fixed side by `gt` instead
/// of a random draw from `spec.misalignment`.
pub fn generate_phantom_with_transform(spec: &PhantomSpec, gt: &Transform2D<f64>) -> Result<Phantom> {
    render_phantom(spec, Some(gt))
}

fn render_phantom(spec: &PhantomSpec, gt: Option<&Transform2D<f64>>) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anatomy = Anatomy::sample(spec, &mut rng)?;
    let window = spec.window_grid()?;
    let basis = Arc::new(TpsBasis::for_grid(&window, DEFAULT_TPS_MARGIN)?);
    let drawn = sample_random_transform(&spec.misalignment, basis, &mut rng);
    let gt = gt.cloned().unwrap_or(drawn);
    gt.validate_for_warp()?;

    let n_mri = spec.side_px(spec.mri_extent_mm);
    let fixed_grid = Grid::centered(n_mri, n_mri, spec.resolution_mm)?;
    let mri_noise = Normal::new(0.0, spec.mri_noise).map_err(|e| Error::Phantom(e.to_string()))?;
    let fixed = Image2D::from_fn(fixed_grid, |_, _, p| clamp01(anatomy.mri(p) + mri_noise.sample(&mut rng)))?;
    let fixed_mask = Mask2D::from_fn(fixed_grid, |_, _, p| anatomy.gland.contains(p));

    let n_hist = spec.side_px(spec.histology_extent_mm);
    let moving_grid = Grid::centered(n_hist, n_hist, spec.resolution_mm)?;
    let inverse = |q: Point<f64>| -> Result<Point<f64>> {
        let (a, s) = match &gt {
            Transform2D::Composite { affine, tps } => (Some(affine), Some(tps)),
            Transform2D::Affine(a) => (Some(a), None),
            Transform2D::Tps(s) => (None, Some(s)),
        };
        let mut p = q;
        if let Some(a) = a {
            p = a.apply_inverse(p).ok_or_else(|| Error::Phantom("singular ground-truth affine".into()))?;
        }
        if let Some(s) = s {
            p = s.apply_inverse(p, 1e-10, 200).ok_or_else(|| Error::Phantom("spline inverse did not converge".into()))?;
        }
        Ok(p)
    };
    let pre: Vec<Point<f64>> = moving_grid.points().into_iter().map(inverse).collect::<Result<_>>()?;
    let hist_noise = Normal::new(0.0, spec.histology_noise).map_err(|e| Error::Phantom(e.to_string()))?;
    let moving = Image2D::new(
        moving_grid,
        pre.iter()
            .map(|p| {
                let (v, tissue) = anatomy.histology(*p);
                clamp01(v + tissue * hist_noise.sample(&mut rng))
            })
            .collect(),
    )?;
    let mask_of = |e: &Ellipse| Mask2D::from_fn(moving_grid, |i, j, _| e.contains(pre[moving_grid.index(i, j)]));
    let moving_mask = mask_of(&anatomy.gland);
    let cancer_label = mask_of(&anatomy.structures[0]);

    let landmarks_f = LandmarkSet::new(anatomy.structures.iter().map(|s| s.c).collect())?;
    let landmarks_m = LandmarkSet::new(landmarks_f.points().iter().map(|p| gt.apply(*p)).collect())?;
    let urethra_f = anatomy.urethra.c;
    let raw = RawCase {
        fixed,
        moving,
        fixed_mask,
        moving_mask,
        cancer_label,
        landmarks_f,
        landmarks_m,
        urethra_f,
        urethra_m: gt.apply(urethra_f),
    };
    let sample = prepare_sample(&raw, spec.window_mm)?;
    Ok(Phantom { raw, sample, gt, seed: spec.seed })
}

/// Per-case seeds drawn from one cohort seed.
pub fn case_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

pub fn case_id(k: usize) -> String {
    format!("case_{k:03}")
}

pub fn generate_cohort_samples(n: usize, spec: &PhantomSpec, seed: u64) -> Result<Vec<Phantom>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    case_seeds(n, seed).into_iter().map(|s| generate_phantom(&PhantomSpec { seed: s, ..spec.clone() })).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarksJson {
    pub fixed: Vec<[f64; 2]>,
    pub moving: Vec<[f64; 2]>,
    #[serde(default)]
    pub urethra_fixed: Option<[f64; 2]>,
    #[serde(default)]
    pub urethra_moving: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub seed: u64,
    pub spec: PhantomSpec,
    pub gt_transform: TransformJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub n: usize,
    pub seed: u64,
    pub spec: PhantomSpec,
    pub cases: Vec<CaseManifest>,
}

pub const FIXED_PNG: &str = "fixed.png";
pub const MOVING_PNG: &str = "moving.png";
pub const FIXED_MASK_PNG: &str = "fixed_mask.png";
pub const MOVING_MASK_PNG: &str = "moving_mask.png";
pub const CANCER_LABEL_PNG: &str = "cancer_label.png";
pub const LANDMARKS_JSON: &str = "landmarks.json";
pub const MANIFEST_JSON: &str = "manifest.json";

pub fn write_case(dir: &Path, case_id: &str, spec: &PhantomSpec, ph: &Phantom) -> Result<CaseManifest> {
    std::fs::create_dir_all(dir)?;
    let r = &ph.raw;
    io::write_image(&dir.join(FIXED_PNG), &r.fixed)?;
    io::write_image(&dir.join(MOVING_PNG), &r.moving)?;
    io::write_mask(&dir.join(FIXED_MASK_PNG), &r.fixed_mask)?;
    io::write_mask(&dir.join(MOVING_MASK_PNG), &r.moving_mask)?;
    io::write_mask(&dir.join(CANCER_LABEL_PNG), &r.cancer_label)?;
    let lm = LandmarksJson {
        fixed: r.landmarks_f.to_arrays(),
        moving: r.landmarks_m.to_arrays(),
        urethra_fixed: Some(r.urethra_f.to_array_f64()),
        urethra_moving: Some(r.urethra_m.to_array_f64()),
    };
    std::fs::write(dir.join(LANDMARKS_JSON), serde_json::to_string_pretty(&lm)?)?;
    let manifest = CaseManifest {
        case_id: case_id.to_string(),
        seed: ph.seed,
        spec: PhantomSpec { seed: ph.seed, ..spec.clone() },
        gt_transform: ph.gt.to_json(),
    };
    std::fs::write(dir.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Writes `n` case directories plus a cohort `manifest.json` under `out`.
pub fn generate_cohort(n: usize, spec: &PhantomSpec, seed: u64, out: &Path) -> Result<CohortManifest> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let mut cases = Vec::with_capacity(n);
    for (k, s) in case_seeds(n, seed).into_iter().enumerate() {
        let case_spec = PhantomSpec { seed: s, ..spec.clone() };
        let ph = generate_phantom(&case_spec)?;
        let id = case_id(k);
        cases.push(write_case(&out.join(&id), &id, spec, &ph)?);
    }
    let manifest = CohortManifest { n, seed, spec: spec.clone(), cases };
    std::fs::write(out.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// What to read from a case directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub masks: bool,
    pub landmarks: bool,
    pub cancer_label: bool,
}

impl LoadOptions {
    pub const ALL: Self = Self { masks: true, landmarks: true, cancer_label: true };
    pub const IMAGES_ONLY: Self = Self { masks: false, landmarks: false, cancer_label: false };
}

pub fn read_landmarks(path: &Path) -> Result<LandmarksJson> {
    Ok(serde_json::from_str(&io::read_to_string(path)?)?)
}

/// Loads a case directory and brings it onto the working window. Files not
/// requested by `opts` are never opened.
pub fn load_case(dir: &Path, window_mm: f64, opts: LoadOptions) -> Result<PairSample<f64>> {
    let fixed: Image2D<f64> = io::read_image(&dir.join(FIXED_PNG))?;
    let moving: Image2D<f64> = io::read_image(&dir.join(MOVING_PNG))?;
    let mut s = PairSample::images(crop_center(&fixed, window_mm)?, pad_to(&moving, window_mm, 0.0)?);
    if opts.masks {
        s.s_f = Some(crop_center_mask(&io::read_mask(&dir.join(FIXED_MASK_PNG), fixed.grid())?, window_mm)?);
        s.s_m = Some(pad_to_mask(&io::read_mask(&dir.join(MOVING_MASK_PNG), moving.grid())?, window_mm)?);
    }
    if opts.cancer_label && dir.join(CANCER_LABEL_PNG).exists() {
        let c = io::read_mask(&dir.join(CANCER_LABEL_PNG), moving.grid())?;
        s.cancer_label_m = Some(pad_to_mask(&c, window_mm)?);
    }
    if opts.landmarks && dir.join(LANDMARKS_JSON).exists() {
        let lm = read_landmarks(&dir.join(LANDMARKS_JSON))?;
        s.landmarks_f = Some(LandmarkSet::from_arrays(&lm.fixed)?);
        s.landmarks_m = Some(LandmarkSet::from_arrays(&lm.moving)?);
        s.urethra_f = lm.urethra_fixed.map(Point::from_array_f64);
        s.urethra_m = lm.urethra_moving.map(Point::from_array_f64);
    }
    s.validate()?;
    Ok(s)
}

/// Case directories of a cohort in manifest order; without a manifest, every
/// subdirectory holding a fixed image, sorted by name.
pub fn cohort_case_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let manifest = root.join(MANIFEST_JSON);
    if manifest.exists() {
        let m: CohortManifest = serde_json::from_str(&io::read_to_string(&manifest)?)?;
        return Ok(m.cases.into_iter().map(|c| (c.case_id.clone(), root.join(&c.case_id))).collect());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.join(FIXED_PNG).is_file() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}
