//! The regression network: a shared convolutional extractor applied to the
//! fixed and the moving image, global average pooling, concatenation, and a
//! three-layer dense head that emits the transform parameters.

mod checkpoint;
pub mod layers;

pub use layers::{global_average_pool, FeatureMap};

use crate::error::{Error, Result};
use crate::imgcore::Image2D;
use crate::scalar::Scalar;
use layers::{avg_pool2, avg_pool2_backward, conv3x3, conv3x3_backward, dense, relu_inplace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Coordinate channels are expressed in units of this many millimetres.
pub const COORD_SCALE_MM: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Output channels of each 3x3 conv + ReLU + 2x2 average-pool block.
    pub conv_blocks: Vec<usize>,
    /// Leading conv blocks whose weights never change.
    pub frozen_prefix: usize,
    /// Widths of the three dense layers; the last equals `theta_dim`.
    pub dense_widths: Vec<usize>,
    pub theta_dim: usize,
    pub seed: u64,
    /// Constant gain on the linear output layer.
    pub output_scale: f64,
    /// Extra per-output gain (empty means 1 for every output).
    pub output_gain: Vec<f64>,
    /// Multiplier on the optimizer step for the trainable conv blocks.
    pub extractor_lr_scale: f64,
    /// Append the two physical-coordinate channels (x, y in mm / 50) to each input.
    pub coord_channels: bool,
    /// Standardize the pooled features with a frozen per-feature shift and
    /// scale (see [`RegNetModel::fit_feature_normalization`]).
    pub feature_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::affine(0)
    }
}

impl NetConfig {
    fn with_dim(theta_dim: usize, seed: u64, output_gain: Vec<f64>) -> Self {
        Self {
            conv_blocks: vec![16, 32],
            frozen_prefix: 1,
            dense_widths: vec![128, 64, theta_dim],
            theta_dim,
            seed,
            output_scale: 16000.0,
            output_gain,
            extractor_lr_scale: 0.1,
            coord_channels: true,
            feature_norm: true,
        }
    }

    pub fn affine(seed: u64) -> Self {
        // linear entries act on coordinates of up to ~50 mm; scale them so one
        // output unit moves the field edge about as far as a translation unit
        let l = 1.0 / COORD_SCALE_MM;
        Self::with_dim(6, seed, vec![l, l, 1.0, l, l, 1.0])
    }

    pub fn deformable(seed: u64) -> Self {
        Self::with_dim(crate::transform::TPS_PARAMS, seed, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.theta_dim != 6 && self.theta_dim != crate::transform::TPS_PARAMS {
            return bad("theta_dim must be 6 or 32");
        }
        if self.dense_widths.len() != 3 {
            return bad("exactly three dense layers are required");
        }
        if self.dense_widths[2] != self.theta_dim {
            return bad("last dense width must equal theta_dim");
        }
        if self.conv_blocks.is_empty() || self.frozen_prefix >= self.conv_blocks.len() {
            return bad("frozen_prefix must be smaller than the number of conv blocks");
        }
        if self.conv_blocks.iter().chain(&self.dense_widths).any(|w| *w == 0) {
            return bad("layer widths must be positive");
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return bad("output_scale must be positive");
        }
        if !(self.extractor_lr_scale.is_finite() && self.extractor_lr_scale > 0.0) {
            return bad("extractor_lr_scale must be positive");
        }
        if !self.output_gain.is_empty() && self.output_gain.len() != self.theta_dim {
            return bad("output_gain must be empty or have theta_dim entries");
        }
        if self.output_gain.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("output gains must be positive");
        }
        Ok(())
    }

    /// Total gain of output `k`.
    pub fn gain(&self, k: usize) -> f64 {
        self.output_scale * self.output_gain.get(k).copied().unwrap_or(1.0)
    }

    /// Step multiplier for tensor `k` of a model built from this config.
    pub fn lr_scale(&self, k: usize) -> f64 {
        if k < 2 * self.conv_blocks.len() {
            self.extractor_lr_scale
        } else {
            1.0
        }
    }

    pub fn input_channels(&self) -> usize {
        if self.coord_channels {
            3
        } else {
            1
        }
    }

    /// Smallest accepted side length: every pooling stage must leave at least 2 pixels.
    pub fn min_input_size(&self) -> usize {
        2 << self.conv_blocks.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub frozen: bool,
}

/// Per-tensor gradients aligned with [`RegNetModel::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn add_scaled(&mut self, other: &Self, a: T) {
        for (g, o) in self.tensors.iter_mut().zip(&other.tensors) {
            g.iter_mut().zip(o).for_each(|(g, o)| *g += a * *o);
        }
    }

    pub fn norm(&self) -> T {
        self.tensors.iter().flatten().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
pub struct RegNetModel<T> {
    cfg: NetConfig,
    tensors: Vec<Tensor<T>>,
    /// Identity of the current weights; any mutation issues a new one.
    stamp: u64,
}

impl<T: Clone> Clone for RegNetModel<T> {
    fn clone(&self) -> Self {
        Self { cfg: self.cfg.clone(), tensors: self.tensors.clone(), stamp: self.stamp }
    }
}

impl<T: PartialEq> PartialEq for RegNetModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.tensors == other.tensors
    }
}

struct BranchCache<T> {
    /// Input of every conv block (channel-expanded image for block 0).
    inputs: Vec<FeatureMap<T>>,
    /// Post-ReLU conv output of every block.
    activations: Vec<FeatureMap<T>>,
    last_hw: (usize, usize),
}

/// Activations recorded by [`RegNetModel::forward`] for one (fixed, moving) pair.
pub struct ForwardCache<T> {
    stamp: u64,
    branches: [BranchCache<T>; 2],
    features: Vec<T>,
    hidden: [Vec<T>; 2],
}

impl<T> ForwardCache<T> {
    /// Input of the dense head: pooled features of the fixed branch followed by
    /// the moving branch, after normalization.
    pub fn features(&self) -> &[T] {
        &self.features
    }
}

impl<T: Scalar> RegNetModel<T> {
    /// He-normal weights for every layer except the output layer, which starts at zero.
    pub fn init(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tensors = Vec::new();
        let mut cin = cfg.input_channels();
        for (k, &cout) in cfg.conv_blocks.iter().enumerate() {
            let frozen = k < cfg.frozen_prefix;
            let fan_in = cin * 9;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let w = (0..cout * fan_in).map(|_| T::lit(normal.sample(&mut rng))).collect();
            tensors.push(Tensor { name: format!("conv{k}.weight"), shape: vec![cout, cin, 3, 3], data: w, frozen });
            tensors.push(Tensor { name: format!("conv{k}.bias"), shape: vec![cout], data: vec![T::zero(); cout], frozen });
            cin = cout;
        }
        let mut nin = 2 * cin;
        if cfg.feature_norm {
            tensors.push(Tensor { name: "norm.shift".into(), shape: vec![nin], data: vec![T::zero(); nin], frozen: true });
            tensors.push(Tensor { name: "norm.scale".into(), shape: vec![nin], data: vec![T::one(); nin], frozen: true });
        }
        for (l, &nout) in cfg.dense_widths.iter().enumerate() {
            let w = if l + 1 == cfg.dense_widths.len() {
                vec![T::zero(); nout * nin]
            } else {
                let normal = Normal::new(0.0, (2.0 / nin as f64).sqrt()).expect("positive std");
                (0..nout * nin).map(|_| T::lit(normal.sample(&mut rng))).collect()
            };
            tensors.push(Tensor { name: format!("dense{l}.weight"), shape: vec![nout, nin], data: w, frozen: false });
            tensors.push(Tensor { name: format!("dense{l}.bias"), shape: vec![nout], data: vec![T::zero(); nout], frozen: false });
            nin = nout;
        }
        Ok(Self { cfg, tensors, stamp: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed) })
    }

    pub(crate) fn from_parts(cfg: NetConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let reference = Self::init(cfg.clone())?;
        if reference.tensors.len() != tensors.len()
            || reference.tensors.iter().zip(&tensors).any(|(a, b)| a.shape != b.shape || a.name != b.name)
        {
            return Err(Error::Checkpoint("tensor table does not match the configuration".into()));
        }
        let tensors = reference
            .tensors
            .into_iter()
            .zip(tensors)
            .map(|(r, t)| Tensor { frozen: r.frozen, ..t })
            .collect();
        Ok(Self { cfg, tensors, stamp: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed) })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Mutable access to the weights. Invalidates outstanding forward caches.
    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        self.stamp = NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed);
        &mut self.tensors
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients { tensors: self.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect() }
    }

    fn conv(&self, k: usize) -> (&[T], &[T]) {
        (&self.tensors[2 * k].data, &self.tensors[2 * k + 1].data)
    }

    fn dense_index(&self, l: usize) -> usize {
        2 * (self.cfg.conv_blocks.len() + l + usize::from(self.cfg.feature_norm))
    }

    fn dense_layer(&self, l: usize) -> (&[T], &[T]) {
        let i = self.dense_index(l);
        (&self.tensors[i].data, &self.tensors[i + 1].data)
    }

    fn norm(&self) -> Option<(&[T], &[T])> {
        let i = 2 * self.cfg.conv_blocks.len();
        self.cfg.feature_norm.then(|| (&self.tensors[i].data[..], &self.tensors[i + 1].data[..]))
    }

    fn raw_features(&self, fixed: &Image2D<T>, moving: &Image2D<T>) -> Result<(Vec<T>, [BranchCache<T>; 2])> {
        let (gf, cf) = self.branch(fixed)?;
        let (gm, cm) = self.branch(moving)?;
        Ok(([gf, gm].concat(), [cf, cm]))
    }

    /// Sets the frozen normalization to the per-feature mean and inverse
    /// standard deviation of the pooled features over `pairs`. Features that
    /// do not vary keep unit scale.
    pub fn fit_feature_normalization<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a Image2D<T>, &'a Image2D<T>)>) -> Result<()>
    where
        T: 'a,
    {
        if !self.cfg.feature_norm {
            return Err(Error::InvalidConfig("feature normalization is disabled".into()));
        }
        let mut rows = Vec::new();
        for (f, m) in pairs {
            rows.push(self.raw_features(f, m)?.0);
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = T::from_usize_lossy(rows.len());
        let d = rows[0].len();
        let mean: Vec<T> = (0..d).map(|k| rows.iter().fold(T::zero(), |a, r| a + r[k]) / n).collect();
        let scale: Vec<T> = (0..d)
            .map(|k| {
                let var = rows.iter().fold(T::zero(), |a, r| a + (r[k] - mean[k]) * (r[k] - mean[k])) / n;
                let sd = var.sqrt();
                if sd > T::lit(1e-12) * (T::one() + mean[k].abs()) {
                    T::one() / sd
                } else {
                    T::one()
                }
            })
            .collect();
        let i = 2 * self.cfg.conv_blocks.len();
        let t = self.tensors_mut();
        t[i].data = mean;
        t[i + 1].data = scale;
        Ok(())
    }

    fn expand_input(&self, img: &Image2D<T>) -> Result<FeatureMap<T>> {
        let min = self.cfg.min_input_size();
        if img.width() < min || img.height() < min {
            return Err(Error::InputTooSmall { width: img.width(), height: img.height(), min });
        }
        let (h, w) = (img.height(), img.width());
        let mut x = FeatureMap::zeros(self.cfg.input_channels(), h, w);
        x.plane_mut(0).copy_from_slice(img.data());
        if self.cfg.coord_channels {
            let g = *img.grid();
            let s = T::lit(1.0 / COORD_SCALE_MM);
            for j in 0..h {
                for i in 0..w {
                    let p = g.point(i, j);
                    x.data[h * w + j * w + i] = p.x * s;
                    x.data[2 * h * w + j * w + i] = p.y * s;
                }
            }
        }
        Ok(x)
    }

    fn branch(&self, img: &Image2D<T>) -> Result<(Vec<T>, BranchCache<T>)> {
        let mut x = self.expand_input(img)?;
        let mut inputs = Vec::new();
        let mut activations = Vec::new();
        for (k, &cout) in self.cfg.conv_blocks.iter().enumerate() {
            let (w, b) = self.conv(k);
            let mut a = conv3x3(&x, w, b, cout);
            relu_inplace(&mut a);
            let pooled = avg_pool2(&a);
            inputs.push(x);
            activations.push(a);
            x = pooled;
        }
        let last_hw = (x.height, x.width);
        Ok((global_average_pool(&x), BranchCache { inputs, activations, last_hw }))
    }

    /// θ for the pair and the activations needed by [`Self::backward`].
    pub fn forward(&self, fixed: &Image2D<T>, moving: &Image2D<T>) -> Result<(Vec<T>, ForwardCache<T>)> {
        let (mut features, [cf, cm]) = self.raw_features(fixed, moving)?;
        if let Some((shift, scale)) = self.norm() {
            features.iter_mut().zip(shift.iter().zip(scale)).for_each(|(f, (a, b))| *f = (*f - *a) * *b);
        }
        let (w0, b0) = self.dense_layer(0);
        let h0: Vec<T> = dense(&features, w0, b0).into_iter().map(|v| v.max(T::zero())).collect();
        let (w1, b1) = self.dense_layer(1);
        let h1: Vec<T> = dense(&h0, w1, b1).into_iter().map(|v| v.max(T::zero())).collect();
        let (w2, b2) = self.dense_layer(2);
        let theta = dense(&h1, w2, b2).into_iter().enumerate().map(|(k, v)| T::lit(self.cfg.gain(k)) * v).collect();
        Ok((theta, ForwardCache { stamp: self.stamp, branches: [cf, cm], features, hidden: [h0, h1] }))
    }

    pub fn predict(&self, fixed: &Image2D<T>, moving: &Image2D<T>) -> Result<Vec<T>> {
        Ok(self.forward(fixed, moving)?.0)
    }

    /// Reverse-mode gradients of `<dθ, θ>` with respect to every tensor; frozen
    /// tensors get zeros and the backward pass stops at the first trainable block.
    pub fn backward(&self, cache: &ForwardCache<T>, dtheta: &[T]) -> Result<Gradients<T>> {
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache("weights changed since the forward pass".into()));
        }
        if dtheta.len() != self.cfg.theta_dim {
            return Err(Error::ShapeMismatch(format!("dθ has length {}, expected {}", dtheta.len(), self.cfg.theta_dim)));
        }
        let mut grads = self.zero_gradients();
        let nconv = self.cfg.conv_blocks.len();
        let mut upstream: Vec<T> = dtheta.iter().enumerate().map(|(k, d)| *d * T::lit(self.cfg.gain(k))).collect();
        let inputs: [&[T]; 3] = [&cache.features, &cache.hidden[0], &cache.hidden[1]];
        for l in (0..3).rev() {
            let x = inputs[l];
            let (w, _) = self.dense_layer(l);
            let idx = self.dense_index(l);
            let nin = x.len();
            {
                let (gw, rest) = grads.tensors[idx..].split_at_mut(1);
                for (o, u) in upstream.iter().enumerate() {
                    rest[0][o] += *u;
                    gw[0][o * nin..(o + 1) * nin].iter_mut().zip(x).for_each(|(g, xi)| *g += *u * *xi);
                }
            }
            let mut down = vec![T::zero(); nin];
            for (o, u) in upstream.iter().enumerate() {
                down.iter_mut().zip(&w[o * nin..(o + 1) * nin]).for_each(|(d, wi)| *d += *u * *wi);
            }
            if l > 0 {
                // ReLU on hidden layers: zero where the activation was clamped
                down.iter_mut().zip(x).for_each(|(d, h)| {
                    if *h <= T::zero() {
                        *d = T::zero()
                    }
                });
            }
            upstream = down;
        }
        if let Some((_, scale)) = self.norm() {
            upstream.iter_mut().zip(scale).for_each(|(u, b)| *u = *u * *b);
        }
        let c_last = *self.cfg.conv_blocks.last().expect("validated");
        for (b, branch) in cache.branches.iter().enumerate() {
            let dg = &upstream[b * c_last..(b + 1) * c_last];
            let (h, w) = branch.last_hw;
            let n = T::from_usize_lossy(h * w);
            let mut d = FeatureMap::zeros(c_last, h, w);
            for c in 0..c_last {
                let v = dg[c] / n;
                d.plane_mut(c).iter_mut().for_each(|x| *x = v);
            }
            for k in (self.cfg.frozen_prefix..nconv).rev() {
                let a = &branch.activations[k];
                let mut da = avg_pool2_backward(&d, a.height, a.width);
                da.data.iter_mut().zip(&a.data).for_each(|(g, v)| {
                    if *v <= T::zero() {
                        *g = T::zero()
                    }
                });
                let (wk, _) = self.conv(k);
                let (gw, gb) = grads.tensors[2 * k..2 * k + 2].split_at_mut(1);
                let want_input = k > self.cfg.frozen_prefix;
                match conv3x3_backward(&branch.inputs[k], wk, &da, &mut gw[0], &mut gb[0], want_input) {
                    Some(dx) => d = dx,
                    None => break,
                }
            }
        }
        Ok(grads)
    }

    /// Applies `f(param, grad)` to every trainable tensor.
    pub fn update_trainable(&mut self, grads: &Gradients<T>, mut f: impl FnMut(usize, &mut [T], &[T])) -> Result<()> {
        if grads.tensors.len() != self.tensors.len()
            || grads.tensors.iter().zip(&self.tensors).any(|(g, t)| g.len() != t.data.len())
        {
            return Err(Error::ShapeMismatch("gradient layout does not match the model".into()));
        }
        for (k, (t, g)) in self.tensors_mut().iter_mut().zip(&grads.tensors).enumerate() {
            if !t.frozen {
                f(k, &mut t.data, g);
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> RegNetModel<U> {
        RegNetModel {
            cfg: self.cfg.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
                    frozen: t.frozen,
                })
                .collect(),
            stamp: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
        }
    }
}
