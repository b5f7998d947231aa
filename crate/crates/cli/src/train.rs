use crate::manifest::RunManifest;
use crate::{read_config, resolve_seed, usage, CliResult};
use anyhow::Context;
use clap::Args;
use regforge::synthdata::{cohort_case_dirs, load_case, LoadOptions};
use regforge::trainer::{train, TrainConfig};
use std::path::PathBuf;
use std::time::Instant;

pub const TRAIN_CONFIG_JSON: &str = "train_config.json";

/// Unset flags fall back to `--config`, then to the paper schedule.
#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Cohort directory as written by gen-phantoms.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Initial learning rate (default 0.001).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-epoch learning-rate factor (default 0.9).
    #[arg(long)]
    pub decay: Option<f64>,
    /// Pairs per optimizer step (default 1; only 1 is supported).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Default 50.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, env = "REGFORGE_SEED")]
    pub seed: Option<u64>,
    /// Network input pixel size (default 1.5625).
    #[arg(long)]
    pub working_resolution_mm: Option<f64>,
    /// Side of the fixed crop and the moving canvas.
    #[arg(long, default_value_t = 100.0)]
    pub window_mm: f64,
    /// Training configuration as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl TrainArgs {
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(p) => read_config(p)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.lr {
            cfg.lr0 = v;
        }
        if let Some(v) = self.decay {
            cfg.lr_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.working_resolution_mm {
            cfg.working_resolution = v;
        }
        if self.seed.is_some() || self.config.is_none() {
            cfg.seed = resolve_seed(self.seed);
        }
        if let Err(e) = cfg.validate() {
            return usage(e.to_string());
        }
        Ok(cfg)
    }
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let cfg = a.resolve()?;
    let cases = cohort_case_dirs(&a.data).with_context(|| format!("listing cases in {}", a.data.display()))?;
    if cases.is_empty() {
        return usage(format!("no cases found in {}", a.data.display()));
    }
    let opts = LoadOptions { masks: true, landmarks: false, cancer_label: false };
    let mut samples = Vec::with_capacity(cases.len());
    for (id, dir) in &cases {
        samples.push(load_case(dir, a.window_mm, opts).with_context(|| format!("case {id} ({})", dir.display()))?);
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join(TRAIN_CONFIG_JSON), serde_json::to_string_pretty(&cfg).context("config")?)
        .context("writing the resolved config")?;
    train(&samples, &cfg, Some(&a.out)).context("training")?;
    let mut config = serde_json::to_value(&cfg).context("config")?;
    config["window_mm"] = a.window_mm.into();
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.config.iter().cloned());
    Ok(RunManifest::finish("train", config, cfg.seed, inputs, &a.out, started)?)
}
