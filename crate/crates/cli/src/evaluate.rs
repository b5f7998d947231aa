use crate::manifest::RunManifest;
use crate::register::{register_pair, stage_rows, RegistrationJson, METRICS_CSV, TRANSFORMS_JSON};
use crate::{read_config, resolve_seed, usage, CliResult};
use anyhow::Context;
use clap::{ArgGroup, Args};
use regforge::metrics::{aggregate_table, render_table, write_csv_file};
use regforge::synthdata::{cohort_case_dirs, load_case, LoadOptions};
use regforge::trainer::{DirectConfig, TrainedPipeline};
use std::path::PathBuf;
use std::time::Instant;

pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Clone, Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "direct", "transforms"])))]
pub struct EvaluateArgs {
    /// Cohort directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Register every case with this trained model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Register every case with the direct optimizer.
    #[arg(long)]
    pub direct: bool,
    /// Directory with `<case_id>/transforms.json` from earlier register runs.
    #[arg(long)]
    pub transforms: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub window_mm: f64,
    #[arg(long, default_value_t = 1.5625)]
    pub working_resolution_mm: f64,
    /// Direct-optimizer settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "REGFORGE_SEED")]
    pub seed: Option<u64>,
}

/// Writes `metrics.csv` (input, affine and composite rows per case) and the
/// per-stage summary, and prints the summary table.
pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let direct: DirectConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => DirectConfig::default(),
    };
    if let Err(e) = direct.validate() {
        return usage(e.to_string());
    }
    let model = match &a.model {
        Some(dir) => {
            Some(TrainedPipeline::<f64>::load(dir).with_context(|| format!("loading model from {}", dir.display()))?)
        }
        None => None,
    };
    let cases = cohort_case_dirs(&a.data).with_context(|| format!("listing cases in {}", a.data.display()))?;
    if cases.is_empty() {
        return usage(format!("no cases found in {}", a.data.display()));
    }

    let mut rows = Vec::with_capacity(3 * cases.len());
    for (id, dir) in &cases {
        let s = load_case(dir, a.window_mm, LoadOptions::ALL).with_context(|| format!("case {id}"))?;
        if s.landmarks_f.is_none() {
            eprintln!("warning: case {id} has no landmarks; landmark and urethra columns left empty");
        }
        let (affine, composite) = match &a.transforms {
            Some(root) => RegistrationJson::read(&root.join(id).join(TRANSFORMS_JSON)).with_context(|| format!("case {id}"))?,
            None => register_pair(&s, model.as_ref(), &direct, a.working_resolution_mm).with_context(|| format!("case {id}"))?,
        };
        rows.extend(stage_rows(&s, id, &affine, &composite).with_context(|| format!("scoring case {id}"))?);
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_csv_file(&rows, &a.out.join(METRICS_CSV))?;
    let table = aggregate_table(&rows);
    std::fs::write(a.out.join(SUMMARY_JSON), serde_json::to_string_pretty(&table).context("summary")?)
        .context("writing summary")?;
    print!("{}", render_table(&table));

    let mode = if a.model.is_some() {
        "model"
    } else if a.direct {
        "direct"
    } else {
        "transforms"
    };
    let config = serde_json::json!({
        "mode": mode,
        "window_mm": a.window_mm,
        "working_resolution_mm": a.working_resolution_mm,
        "direct": if a.direct { serde_json::to_value(&direct).context("config")? } else { serde_json::Value::Null },
    });
    let inputs = [Some(&a.data), a.model.as_ref(), a.transforms.as_ref(), a.config.as_ref()].into_iter().flatten().cloned().collect();
    Ok(RunManifest::finish("evaluate", config, resolve_seed(a.seed), inputs, &a.out, started)?)
}
