use crate::manifest::RunManifest;
use crate::{read_config, resolve_seed, usage, CliResult};
use anyhow::Context;
use clap::Args;
use regforge::imgcore::io::{read_image, read_mask, read_to_string, write_image, write_mask};
use regforge::imgcore::{
    crop_center, crop_center_mask, pad_to, pad_to_mask, standardize_intensity, warp, warp_mask, HistogramStandard, Image2D,
    Interp,
};
use regforge::metrics::{write_csv_file, LandmarkSet, MetricsRow, Stage};
use regforge::synthdata::read_landmarks;
use regforge::trainer::{optimize_pair_direct_traced, working_grid, DirectConfig, PairSample, TrainedPipeline};
use regforge::transform::{Transform2D, TransformJson};
use regforge::Point;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const TRANSFORMS_JSON: &str = "transforms.json";
pub const WARPED_MOVING_PNG: &str = "warped_moving.png";
pub const WARPED_LABEL_PNG: &str = "warped_cancer_label.png";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Clone, Debug, Args)]
pub struct RegisterArgs {
    /// Fixed image (PNG with a JSON sidecar).
    #[arg(long)]
    pub fixed: PathBuf,
    /// Moving image (PNG with a JSON sidecar).
    #[arg(long)]
    pub moving: PathBuf,
    /// Run directory of a trained model (affine.rgfn, deform.rgfn).
    #[arg(long, conflicts_with = "direct", required_unless_present = "direct")]
    pub model: Option<PathBuf>,
    /// Optimize this pair without a network; needs both masks.
    #[arg(long)]
    pub direct: bool,
    #[arg(long)]
    pub fixed_mask: Option<PathBuf>,
    #[arg(long)]
    pub moving_mask: Option<PathBuf>,
    /// Landmark file; used for scoring only.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Label on the moving image to carry onto the fixed grid.
    #[arg(long)]
    pub cancer_label: Option<PathBuf>,
    /// Intensity standard `{"decile_landmarks": [11 values]}`; standardizes the fixed image.
    #[arg(long)]
    pub reference_histogram: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub window_mm: f64,
    #[arg(long, default_value_t = 1.5625)]
    pub working_resolution_mm: f64,
    /// Direct-optimizer settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Case name used in the metrics rows.
    #[arg(long, default_value = "case")]
    pub case_id: String,
    #[arg(long, env = "REGFORGE_SEED")]
    pub seed: Option<u64>,
}

/// Contents of `transforms.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationJson {
    pub affine: TransformJson,
    pub composite: TransformJson,
}

impl RegistrationJson {
    pub fn read(path: &Path) -> anyhow::Result<(Transform2D<f64>, Transform2D<f64>)> {
        let r: Self = serde_json::from_str(&read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?;
        Ok((r.affine.to_transform()?, r.composite.to_transform()?))
    }
}

/// Registers a cropped and padded pair at the working resolution. Direct mode
/// expects the masks to be set on `s`.
pub(crate) fn register_pair(
    s: &PairSample<f64>,
    model: Option<&TrainedPipeline<f64>>,
    direct: &DirectConfig,
    resolution: f64,
) -> anyhow::Result<(Transform2D<f64>, Transform2D<f64>)> {
    let work = s.resampled(&working_grid(s.i_f.grid(), resolution)?);
    Ok(match model {
        Some(p) => {
            let r = p.register(&work.i_f, &work.i_m)?;
            (r.affine, r.composite)
        }
        None => {
            let r = optimize_pair_direct_traced(&work, direct)?;
            (r.affine, r.composite)
        }
    })
}

pub(crate) fn stage_rows(
    s: &PairSample<f64>,
    case_id: &str,
    affine: &Transform2D<f64>,
    composite: &Transform2D<f64>,
) -> regforge::Result<Vec<MetricsRow>> {
    Ok(vec![
        s.metrics(case_id, Stage::Input, &Transform2D::identity_affine())?,
        s.metrics(case_id, Stage::Affine, affine)?,
        s.metrics(case_id, Stage::Composite, composite)?,
    ])
}

fn with_masks(
    mut s: PairSample<f64>,
    a: &RegisterArgs,
    fixed: &Image2D<f64>,
    moving: &Image2D<f64>,
) -> anyhow::Result<PairSample<f64>> {
    let (Some(fm), Some(mm)) = (&a.fixed_mask, &a.moving_mask) else {
        return Ok(s);
    };
    let f = read_mask(fm, fixed.grid()).with_context(|| format!("reading {}", fm.display()))?;
    let m = read_mask(mm, moving.grid()).with_context(|| format!("reading {}", mm.display()))?;
    s.s_f = Some(crop_center_mask(&f, a.window_mm)?);
    s.s_m = Some(pad_to_mask(&m, a.window_mm)?);
    if let Some(lp) = &a.landmarks {
        let lm = read_landmarks(lp).with_context(|| format!("reading {}", lp.display()))?;
        s.landmarks_f = Some(LandmarkSet::from_arrays(&lm.fixed)?);
        s.landmarks_m = Some(LandmarkSet::from_arrays(&lm.moving)?);
        s.urethra_f = lm.urethra_fixed.map(Point::from_array_f64);
        s.urethra_m = lm.urethra_moving.map(Point::from_array_f64);
    }
    Ok(s)
}

/// With `--model` the transform is computed from the two images alone; mask
/// files are opened only when given, and only after the transforms and warped
/// outputs are written, to score the result.
pub fn cmd_register(a: &RegisterArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let has_masks = a.fixed_mask.is_some() && a.moving_mask.is_some();
    if a.fixed_mask.is_some() != a.moving_mask.is_some() {
        return usage("--fixed-mask and --moving-mask must be given together");
    }
    if a.direct && !has_masks {
        return usage(
            "--direct maximizes the overlap of the prostate segmentations and needs --fixed-mask and --moving-mask; \
             use --model to register from the images alone",
        );
    }
    let direct: DirectConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => DirectConfig::default(),
    };
    if let Err(e) = direct.validate() {
        return usage(e.to_string());
    }

    let fixed_raw: Image2D<f64> = read_image(&a.fixed).with_context(|| format!("reading {}", a.fixed.display()))?;
    let moving_raw: Image2D<f64> = read_image(&a.moving).with_context(|| format!("reading {}", a.moving.display()))?;
    let mut i_f = crop_center(&fixed_raw, a.window_mm).context("cropping the fixed image")?;
    let i_m = pad_to(&moving_raw, a.window_mm, 0.0).context("padding the moving image")?;
    if let Some(h) = &a.reference_histogram {
        let std = HistogramStandard::from_json(&read_to_string(h)?).with_context(|| format!("reading {}", h.display()))?;
        i_f = standardize_intensity(&i_f, &std);
    }
    let mut s = PairSample::images(i_f, i_m);

    let (affine, composite) = match &a.model {
        Some(dir) => {
            let p = TrainedPipeline::<f64>::load(dir).with_context(|| format!("loading model from {}", dir.display()))?;
            register_pair(&s, Some(&p), &direct, a.working_resolution_mm)?
        }
        None => {
            s = with_masks(s, a, &fixed_raw, &moving_raw)?;
            register_pair(&s, None, &direct, a.working_resolution_mm)?
        }
    };

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let json = RegistrationJson { affine: affine.to_json(), composite: composite.to_json() };
    std::fs::write(a.out.join(TRANSFORMS_JSON), serde_json::to_string_pretty(&json).context("transforms")?)
        .context("writing transforms")?;
    let grid = *s.i_f.grid();
    write_image(&a.out.join(WARPED_MOVING_PNG), &warp(&s.i_m, &composite, &grid, Interp::Bilinear))?;
    let mut inputs = vec![a.fixed.clone(), a.moving.clone()];
    if let Some(lp) = &a.cancer_label {
        let label = read_mask(lp, moving_raw.grid()).with_context(|| format!("reading {}", lp.display()))?;
        let label = pad_to_mask(&label, a.window_mm)?;
        write_mask(&a.out.join(WARPED_LABEL_PNG), &warp_mask(&label, &composite, &grid, Interp::Nearest)?)?;
        inputs.push(lp.clone());
    }

    if has_masks {
        if s.s_f.is_none() {
            s = with_masks(s, a, &fixed_raw, &moving_raw)?;
        }
        let rows = stage_rows(&s, &a.case_id, &affine, &composite).context("scoring")?;
        write_csv_file(&rows, &a.out.join(METRICS_CSV))?;
    } else if a.landmarks.is_some() {
        eprintln!("warning: scoring needs both masks; --landmarks ignored");
    }
    inputs.extend(a.model.iter().cloned());
    inputs.extend([&a.fixed_mask, &a.moving_mask, &a.landmarks, &a.reference_histogram, &a.config].into_iter().flatten().cloned());

    let config = serde_json::json!({
        "mode": if a.direct { "direct" } else { "model" },
        "window_mm": a.window_mm,
        "working_resolution_mm": a.working_resolution_mm,
        "direct": if a.direct { serde_json::to_value(&direct).context("config")? } else { serde_json::Value::Null },
    });
    Ok(RunManifest::finish("register", config, resolve_seed(a.seed), inputs, &a.out, started)?)
}
