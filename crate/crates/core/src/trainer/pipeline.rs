use super::adam::{adam_update, AdamState};
use super::sample::working_grid;
use super::synthetic::{make_synthetic_pair, MonoPair};
use super::PairSample;
use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::imgcore::{warp, Image2D, Interp};
use crate::loss::{affine_loss, deformable_loss, LossBreakdown, LossWeights, RegularizerSpec, Trainable, WarpContext};
use crate::net::{Gradients, NetConfig, RegNetModel};
use crate::scalar::Scalar;
use crate::transform::{
    AffineParams, RandomTransformSpec, TpsBasis, TpsParams, Transform2D, DEFAULT_ALPHA, DEFAULT_TPS_MARGIN,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

pub const AFFINE_CHECKPOINT: &str = "affine.rgfn";
pub const DEFORM_CHECKPOINT: &str = "deform.rgfn";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub regularizer: RegularizerSpec,
    pub random_spec: RandomTransformSpec,
    pub seed: u64,
    /// mm per pixel of the rasters the networks see.
    pub working_resolution: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            lr_decay: 0.9,
            batch_size: 1,
            epochs: 50,
            weights: LossWeights::default(),
            regularizer: RegularizerSpec::default(),
            random_spec: RandomTransformSpec::default(),
            seed: 0,
            working_resolution: 1.5625,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} must lie in (0, 1]", self.lr_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size != 1 {
            return bad(format!("batch size {} is unsupported; training is per-pair", self.batch_size));
        }
        if !(self.working_resolution > 0.0 && self.working_resolution.is_finite()) {
            return bad(format!("working resolution {} mm", self.working_resolution));
        }
        self.weights.validate()?;
        self.regularizer.validate()?;
        self.random_spec.validate()
    }

    /// `lr0 * decay^epoch`, with the power formed by repeated multiplication
    /// so the value does not depend on how `powi` is lowered.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * (0..epoch).fold(1.0, |d, _| d * self.lr_decay)
    }
}

/// Losses of one combined step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub affine: LossBreakdown,
    pub deform: LossBreakdown,
}

impl StepLoss {
    pub fn total(&self) -> LossBreakdown {
        self.affine.sum(&self.deform)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub sample: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub total: LossBreakdown,
    pub affine: LossBreakdown,
    pub deform: LossBreakdown,
}

/// Affine and deformable transforms predicted for one pair.
#[derive(Clone, Debug)]
pub struct Registration<T> {
    pub affine: Transform2D<T>,
    pub composite: Transform2D<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPipeline<T> {
    pub affine_net: RegNetModel<T>,
    pub deform_net: RegNetModel<T>,
    pub train_log: Vec<StepRecord>,
}

fn affine_from<T: Scalar>(theta: &[T]) -> AffineParams<T> {
    let mut th = [T::zero(); 6];
    th.copy_from_slice(theta);
    AffineParams::new(th, T::lit(DEFAULT_ALPHA))
}

fn tps_from<T: Scalar>(basis: &Arc<TpsBasis<T>>, theta: Vec<T>) -> Result<TpsParams<T>> {
    TpsParams::new(basis.clone(), theta, T::lit(DEFAULT_ALPHA))
}

impl<T: Scalar> TrainedPipeline<T> {
    /// Freshly initialized networks; the deformable net uses a derived seed.
    pub fn init(seed: u64) -> Result<Self> {
        Self::from_nets(
            RegNetModel::init(NetConfig::affine(seed))?,
            RegNetModel::init(NetConfig::deformable(seed ^ 0x9e37_79b9_7f4a_7c15))?,
        )
    }

    pub fn from_nets(affine_net: RegNetModel<T>, deform_net: RegNetModel<T>) -> Result<Self> {
        if affine_net.config().theta_dim != 6 || deform_net.config().theta_dim != Trainable::Tps.len() {
            return Err(Error::InvalidConfig(format!(
                "pipeline needs 6 affine and {} spline outputs, got {} and {}",
                Trainable::Tps.len(),
                affine_net.config().theta_dim,
                deform_net.config().theta_dim
            )));
        }
        Ok(Self { affine_net, deform_net, train_log: Vec::new() })
    }

    /// Fits the frozen feature normalization of both networks on the image
    /// pairs of `samples`. Both stages see the unwarped pairs, which is what the
    /// deformable net receives while the affine net still predicts identity.
    pub fn fit_normalization(&mut self, samples: &[PairSample<T>]) -> Result<()> {
        let pairs = || samples.iter().map(|s| (&s.i_f, &s.i_m));
        self.affine_net.fit_feature_normalization(pairs())?;
        self.deform_net.fit_feature_normalization(pairs())
    }

    /// Predicts the affine, warps the moving image with it, then predicts the
    /// spline refinement. Needs images only.
    pub fn register(&self, i_f: &Image2D<T>, i_m: &Image2D<T>) -> Result<Registration<T>> {
        let basis = Arc::new(TpsBasis::for_grid(i_f.grid(), T::lit(DEFAULT_TPS_MARGIN))?);
        let a = affine_from(&self.affine_net.predict(i_f, i_m)?);
        let affine = Transform2D::Affine(a.clone());
        affine.validate_for_warp()?;
        let i_m_a = warp(i_m, &affine, i_f.grid(), Interp::Bilinear);
        let tps = tps_from(&basis, self.deform_net.predict(i_f, &i_m_a)?)?;
        let composite = Transform2D::Composite { affine: a, tps };
        composite.validate_for_warp()?;
        Ok(Registration { affine, composite })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.affine_net.save(&dir.join(AFFINE_CHECKPOINT))?;
        self.deform_net.save(&dir.join(DEFORM_CHECKPOINT))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_nets(
            RegNetModel::load(&dir.join(AFFINE_CHECKPOINT))?,
            RegNetModel::load(&dir.join(DEFORM_CHECKPOINT))?,
        )
    }
}

/// Gradient-evaluation caches keyed by working grid.
#[derive(Debug, Default)]
pub struct ContextCache<T> {
    entries: Vec<Arc<WarpContext<T>>>,
}

impl<T: Scalar> ContextCache<T> {
    pub fn get(&mut self, grid: &Grid<T>, reg: &RegularizerSpec) -> Result<Arc<WarpContext<T>>> {
        if let Some(c) = self.entries.iter().find(|c| c.grid().compatible(grid)) {
            return Ok(c.clone());
        }
        let basis = Arc::new(TpsBasis::for_grid(grid, T::lit(DEFAULT_TPS_MARGIN))?);
        let ctx = Arc::new(WarpContext::new(*grid, basis, reg)?);
        self.entries.push(ctx.clone());
        Ok(ctx)
    }
}

/// Optimizer state carried across steps.
#[derive(Debug)]
pub struct TrainState<T> {
    pub adam_affine: AdamState<T>,
    pub adam_deform: AdamState<T>,
    pub contexts: ContextCache<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(p: &TrainedPipeline<T>) -> Self {
        Self {
            adam_affine: AdamState::for_model(&p.affine_net),
            adam_deform: AdamState::for_model(&p.deform_net),
            contexts: ContextCache::default(),
        }
    }
}

/// Losses and network gradients of one combined step, before any update.
pub struct StepGradients<T> {
    pub loss: StepLoss,
    pub affine: Gradients<T>,
    pub deform: Gradients<T>,
}

/// Evaluates both objectives on one multimodal pair and its two mono-modal
/// pairs. The deformable stage sees the affine output as a constant.
pub fn step_gradients<T: Scalar>(
    p: &TrainedPipeline<T>,
    s: &PairSample<T>,
    mono: &(MonoPair<T>, MonoPair<T>),
    ctx: &WarpContext<T>,
    w: &LossWeights,
) -> Result<StepGradients<T>> {
    let (s_f, s_m) = s.masks()?;
    if !s.i_m.grid().compatible(ctx.grid()) {
        return Err(Error::GridMismatch("moving image is not on the working grid".into()));
    }
    let (w_int, w_reg) = (T::lit(w.w_int), T::lit(w.w_reg));
    let grid = ctx.grid();
    let monos = [&mono.0, &mono.1];

    // affine stage
    let net = &p.affine_net;
    let (theta, cache) = net.forward(&s.i_f, &s.i_m)?;
    let a = affine_from(&theta);
    let (seg, g) = ctx.seg_with_grad(s_f, s_m, &Transform2D::Affine(a.clone()), Trainable::Affine)?;
    let mut grads_a = net.backward(&cache, &g)?;
    let mut int = T::zero();
    let mut mono_affines = Vec::with_capacity(2);
    for mp in monos {
        let (theta, cache) = net.forward(&mp.reference, &mp.warped)?;
        let t = Transform2D::Affine(affine_from(&theta));
        let (l, g) = ctx.mse_with_grad(&mp.reference, &mp.warped, &t, Trainable::Affine)?;
        int += l;
        grads_a.add_scaled(&net.backward(&cache, &g)?, w_int);
        mono_affines.push(t);
    }
    let affine = affine_loss(seg, int, w);

    // deformable stage on affine-initialized inputs
    let net = &p.deform_net;
    let basis = ctx.basis();
    let i_m_a = warp(&s.i_m, &Transform2D::Affine(a.clone()), grid, Interp::Bilinear);
    let (theta, cache) = net.forward(&s.i_f, &i_m_a)?;
    let tps = tps_from(basis, theta)?;
    let (reg, g_reg) = ctx.reg_with_grad(&tps);
    let comp = Transform2D::Composite { affine: a, tps };
    let (seg, mut g) = ctx.seg_with_grad(s_f, s_m, &comp, Trainable::Tps)?;
    g.iter_mut().zip(&g_reg).for_each(|(g, r)| *g += w_reg * *r);
    let mut grads_d = net.backward(&cache, &g)?;
    let mut int = T::zero();
    for (mp, ta) in monos.into_iter().zip(mono_affines) {
        let warped_a = warp(&mp.warped, &ta, grid, Interp::Bilinear);
        let (theta, cache) = net.forward(&mp.reference, &warped_a)?;
        let Transform2D::Affine(a) = ta else { unreachable!("mono affine") };
        let comp = Transform2D::Composite { affine: a, tps: tps_from(basis, theta)? };
        let (l, g) = ctx.mse_with_grad(&mp.reference, &mp.warped, &comp, Trainable::Tps)?;
        int += l;
        grads_d.add_scaled(&net.backward(&cache, &g)?, w_int);
    }
    let deform = deformable_loss(seg, int, reg, w);

    Ok(StepGradients { loss: StepLoss { affine, deform }, affine: grads_a, deform: grads_d })
}

/// One combined step: draws the mono-modal pairs, evaluates both objectives
/// and applies an Adam update to each network.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    p: &mut TrainedPipeline<T>,
    s: &PairSample<T>,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut R,
    state: &mut TrainState<T>,
) -> Result<StepLoss> {
    let ctx = state.contexts.get(s.i_f.grid(), &cfg.regularizer)?;
    let mono = make_synthetic_pair(s, &cfg.random_spec, ctx.basis().clone(), rng)?;
    let sg = step_gradients(p, s, &mono, &ctx, &cfg.weights)?;
    if !sg.loss.affine.is_finite() || !sg.loss.deform.is_finite() || !sg.affine.is_finite() || !sg.deform.is_finite() {
        let diag = serde_json::to_string(&sg.loss).unwrap_or_default();
        return Err(Error::NonFinite(format!("training step {diag}")));
    }
    adam_update(&mut state.adam_affine, &mut p.affine_net, &sg.affine, lr)?;
    adam_update(&mut state.adam_deform, &mut p.deform_net, &sg.deform, lr)?;
    Ok(sg.loss)
}

/// Rasters of every sample on the working grid for `cfg.working_resolution`.
pub fn prepare_dataset<T: Scalar>(dataset: &[PairSample<T>], resolution: f64) -> Result<Vec<PairSample<T>>> {
    dataset
        .iter()
        .map(|s| {
            s.validate()?;
            let g = working_grid(s.i_f.grid(), T::lit(resolution))?;
            Ok(s.resampled(&g))
        })
        .collect()
}

/// Epoch loop with `lr(e) = lr0 * decay^e` and a seeded shuffle per epoch.
/// With `out_dir`, writes the JSON-lines log, per-epoch checkpoints under
/// `checkpoints/`, and the final networks.
pub fn train<T: Scalar>(dataset: &[PairSample<T>], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainedPipeline<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let samples = prepare_dataset(dataset, cfg.working_resolution)?;
    let mut p = TrainedPipeline::init(cfg.seed)?;
    p.fit_normalization(&samples)?;
    let mut state = TrainState::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints"))?;
            Some(std::io::BufWriter::new(std::fs::File::create(dir.join(TRAIN_LOG))?))
        }
        None => None,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle);
        for &k in &order {
            let loss = train_step(&mut p, &samples[k], cfg, lr, &mut rng, &mut state)
                .map_err(|e| annotate(e, epoch, step, k))?;
            let rec = StepRecord { epoch, step, sample: k, lr, total: loss.total(), affine: loss.affine, deform: loss.deform };
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut *w, &rec)?;
                w.write_all(b"\n")?;
            }
            p.train_log.push(rec);
            step += 1;
        }
        if let (Some(dir), Some(w)) = (out_dir, log.as_mut()) {
            w.flush()?;
            let ck = dir.join("checkpoints");
            p.affine_net.save(&ck.join(format!("epoch_{epoch:03}.{AFFINE_CHECKPOINT}")))?;
            p.deform_net.save(&ck.join(format!("epoch_{epoch:03}.{DEFORM_CHECKPOINT}")))?;
        }
    }
    if let Some(dir) = out_dir {
        p.save(dir)?;
    }
    Ok(p)
}

fn annotate(e: Error, epoch: usize, step: usize, sample: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} (epoch {epoch}, step {step}, sample {sample})")),
        other => other,
    }
}

/// Mean total loss per epoch from a training log.
pub fn epoch_means(log: &[StepRecord]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in log {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.total.total;
        out[r.epoch].1 += 1;
    }
    out.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
}
