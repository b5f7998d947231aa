use crate::manifest::RunManifest;
use crate::{read_config, resolve_seed, usage, CliResult};
use anyhow::Context;
use clap::Args;
use regforge::synthdata::{generate_cohort, PhantomSpec};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Clone, Debug, Args)]
pub struct GenArgs {
    /// Number of cases.
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "REGFORGE_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixel size of the written images (default 1.5625).
    #[arg(long)]
    pub resolution_mm: Option<f64>,
    /// Phantom specification as JSON; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn cmd_gen_phantoms(a: &GenArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    if a.n == 0 {
        return usage("--n must be at least 1");
    }
    let mut spec: PhantomSpec = match &a.config {
        Some(p) => read_config(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(r) = a.resolution_mm {
        spec.resolution_mm = r;
    }
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    let seed = resolve_seed(a.seed);
    generate_cohort(a.n, &spec, seed, &a.out).with_context(|| format!("writing cohort to {}", a.out.display()))?;
    let config = serde_json::json!({ "n": a.n, "spec": spec });
    let inputs = a.config.iter().cloned().collect();
    Ok(RunManifest::finish("gen-phantoms", config, seed, inputs, &a.out, started)?)
}
